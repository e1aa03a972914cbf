#pragma once

// On-disk dataset layout written by `gen-data` and read back for training:
//
//   <dir>/categories.txt   one category name per line
//   <dir>/manifest.tsv     id <TAB> category index <TAB> split <TAB> events file <TAB> image file
//   <dir>/events/<id>.evt1 event stream
//   <dir>/images/<id>.efr1 paired image as a single-frame EFR1 (T = 1)

#include "eventbind/errors.hpp"
#include "eventbind/formats.hpp"
#include "eventbind/harness/synthetic.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

namespace eventbind::harness {

namespace fs = std::filesystem;

inline ByteFrames image_to_bytes(const std::vector<double>& image, int size) {
  ByteFrames f(1, size, size, 3);
  if (image.size() != f.values.size()) throw DataError(DataError::Code::kBadHeader, "image size does not match sensor");
  for (std::size_t i = 0; i < image.size(); ++i) f.values[i] = static_cast<std::uint8_t>(std::clamp(image[i], 0.0, 255.0));
  return f;
}

inline void write_dataset(const fs::path& dir, const Dataset& train, const Dataset& val) {
  fs::create_directories(dir / "events");
  fs::create_directories(dir / "images");
  {
    std::ofstream cats(dir / "categories.txt");
    for (const auto& c : train.categories) cats << c << '\n';
    if (!cats) throw DataError(DataError::Code::kIo, "cannot write categories.txt");
  }
  std::ofstream manifest(dir / "manifest.tsv");
  auto emit = [&](const Dataset& d, const char* split) {
    for (const auto& s : d.samples) {
      const std::string ev = "events/" + std::to_string(s.id) + ".evt1";
      const std::string im = "images/" + std::to_string(s.id) + ".efr1";
      formats::write_evt1((dir / ev).string(), s.events);
      formats::write_efr1((dir / im).string(), image_to_bytes(s.image, d.sensor_size));
      manifest << s.id << '\t' << s.category << '\t' << split << '\t' << ev << '\t' << im << '\n';
    }
  };
  emit(train, "train");
  emit(val, "val");
  if (!manifest) throw DataError(DataError::Code::kIo, "cannot write manifest.tsv");
}

/// Reads a directory produced by write_dataset. Returns (train, val).
inline std::pair<Dataset, Dataset> read_dataset(const fs::path& dir) {
  Dataset train, val;
  {
    std::ifstream cats(dir / "categories.txt");
    if (!cats) throw DataError(DataError::Code::kIo, "cannot read " + (dir / "categories.txt").string());
    std::string line;
    while (std::getline(cats, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) train.categories.push_back(line);
    }
  }
  val.categories = train.categories;
  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw DataError(DataError::Code::kIo, "cannot read " + (dir / "manifest.tsv").string());
  std::string line;
  int lineno = 0;
  int sensor = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, cat, split, ev, im;
    if (!std::getline(row, id, '\t') || !std::getline(row, cat, '\t') || !std::getline(row, split, '\t') || !std::getline(row, ev, '\t') ||
        !std::getline(row, im)) {
      throw DataError(DataError::Code::kBadHeader, "manifest line " + std::to_string(lineno) + ": expected 5 fields");
    }
    SyntheticSample s;
    auto to_int = [&](const std::string& v) {
      int out = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc() || p != v.data() + v.size()) throw DataError(DataError::Code::kBadHeader, "manifest line " + std::to_string(lineno) + ": bad integer");
      return out;
    };
    s.id = to_int(id);
    s.category = to_int(cat);
    if (s.category < 0 || static_cast<std::size_t>(s.category) >= train.categories.size()) {
      throw DataError(DataError::Code::kOutOfBounds, "manifest line " + std::to_string(lineno) + ": category index out of range");
    }
    s.events = formats::read_evt1((dir / ev).string());
    const ByteFrames img = formats::read_efr1((dir / im).string());
    if (img.frames != 1 || img.height != s.events.height || img.width != s.events.width) {
      throw DataError(DataError::Code::kBadHeader, im + ": image geometry does not match event sensor");
    }
    s.image.assign(img.values.begin(), img.values.end());
    sensor = s.events.width;
    if (split == "train") {
      train.samples.push_back(std::move(s));
    } else if (split == "val") {
      val.samples.push_back(std::move(s));
    } else {
      throw DataError(DataError::Code::kBadHeader, "manifest line " + std::to_string(lineno) + ": unknown split '" + split + "'");
    }
  }
  train.sensor_size = val.sensor_size = sensor;
  return {std::move(train), std::move(val)};
}

}  // namespace eventbind::harness
