#pragma once

// Run configuration: a plain key=value text file. Blank lines and lines
// starting with '#' are ignored; unknown keys are errors. `preset=toy` or
// `preset=vit_b16` selects the base values that the remaining keys override.

#include "eventbind/errors.hpp"
#include "eventbind/event_encoder.hpp"
#include "eventbind/event_representation.hpp"
#include "eventbind/harness/synthetic.hpp"
#include "eventbind/htca.hpp"
#include "eventbind/text_image_encoders.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace eventbind::harness {

struct RunConfig {
  std::string preset = "toy";

  // data
  std::uint64_t seed = 7;
  std::vector<std::string> categories{"square", "triangle", "disk", "cross", "bar"};
  std::string category_file;
  int train_per_category = 40;
  int val_per_category = 10;
  int sensor_size = 32;
  std::string data_dir;  // empty: synthesize in memory from seed
  SimulatorSettings simulator{};

  // representation
  RepresentationConfig representation{1024, 256, 32};

  // encoders
  EncoderGeometry event{};
  int image_layers = 2;
  TextGeometry text{};
  bool content_prompts = true;
  bool separate_content_mlps = false;
  bool query_conditioned_text = true;

  // objective
  htca::LossWeights weights{};
  bool symmetric_loss = false;
  bool no_image = false;
  double init_temperature = htca::kInitTemperature;
  bool learnable_temperature = true;

  // optimization
  double lr = 1e-3;
  double weight_decay = 2e-4;
  double min_lr = 1e-8;
  int epochs = 200;
  int batch_size = 16;
  int few_shot_k = 0;  // 0: full training set
  int eval_every = 5;
  double early_stop_train_acc = 0.0;  // 0: disabled
  int max_batches_per_epoch = 0;      // 0: no limit
  bool train_image_encoder = true;
  bool train_text_encoder = true;
  bool augment = false;  // random dihedral transform per training sample and step

  std::string out_dir = "runs/toy";

  [[nodiscard]] htca::LossWeights effective_weights() const { return no_image ? htca::LossWeights::image_absent() : weights; }

  [[nodiscard]] EncoderGeometry image_geometry() const {
    EncoderGeometry g = event;
    g.layers = image_layers;
    g.frames = 1;
    return g;
  }

  /// Encoder and prompt switches in effect, e.g. "event[prompts,temporal] text[hybrid,content]".
  [[nodiscard]] std::string structure() const {
    auto group = [](const char* name, std::vector<std::pair<const char*, bool>> flags) {
      std::string s = std::string(name) + "[";
      bool any = false;
      for (const auto& [label, on] : flags) {
        if (!on) continue;
        s += (any ? "," : "") + std::string(label);
        any = true;
      }
      return s + (any ? "]" : "plain]");
    };
    return group("event", {{"prompts", event.event_prompts && event.prompts > 0}, {"temporal", event.temporal_modeling}}) + " " +
           group("text", {{"hybrid", text.hybrid_prompts}, {"content", content_prompts}}) + (no_image ? " image[absent]" : "");
  }

  static RunConfig toy() { return RunConfig{}; }

  /// ViT-B/16-shaped encoders, lr 1e-5, 30 epochs, batch 16.
  static RunConfig vit_b16() {
    RunConfig c;
    c.preset = "vit_b16";
    c.sensor_size = 224;
    c.representation = {600000, 150000, 224};
    c.event = EncoderGeometry{224, 16, 768, 12, 12, 4, 16, 512, true, true, false, 1.0 / 255.0};
    c.image_layers = 12;
    c.text.width = 512;
    c.text.layers = 12;
    c.text.heads = 8;
    c.text.context = 77;
    c.text.learnable_prompts = 16;
    c.text.embed_dim = 512;
    c.lr = 1e-5;
    c.epochs = 30;
    c.batch_size = 16;
    return c;
  }

  void validate() const {
    if (categories.size() < 2) throw ConfigError("need at least two categories");
    if (train_per_category < 1 || val_per_category < 0) throw ConfigError("per-category sample counts must be positive");
    if (sensor_size < 1 || sensor_size > 0xFFFF) throw ConfigError("sensor_size out of range");
    simulator.validate();
    representation.validate();
    event.validate();
    image_geometry().validate();
    text.validate();
    weights.validate();
    if (representation.frame_count() != event.frames) {
      throw ConfigError("events_total / events_per_frame (" + std::to_string(representation.frame_count()) + ") must equal frames (" +
                        std::to_string(event.frames) + ")");
    }
    if (representation.target_resolution != event.image_size) throw ConfigError("target_resolution must equal image_size");
    if (text.embed_dim != event.embed_dim) throw ConfigError("text embed_dim must equal event embed_dim");
    if (!(init_temperature >= htca::kMinTemperature && init_temperature <= htca::kMaxTemperature)) throw ConfigError("init_temperature out of [1e-3, 100]");
    if (!(lr > 0.0) || !(min_lr >= 0.0) || min_lr > lr) throw ConfigError("need 0 <= min_lr <= lr, lr > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (few_shot_k < 0) throw ConfigError("few_shot_k must be >= 0");
    if (few_shot_k > train_per_category) throw ConfigError("few_shot_k exceeds train_per_category");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (early_stop_train_acc < 0.0 || early_stop_train_acc > 1.0) throw ConfigError("early_stop_train_acc must be in [0,1]");
    if (max_batches_per_epoch < 0) throw ConfigError("max_batches_per_epoch must be >= 0");
  }

  /// Every key in a fixed order; parse(serialize()) reproduces the config.
  [[nodiscard]] std::string serialize() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [key, field] : fields()) {
      // the snapshot carries the resolved category list, not the file it came from
      os << key << '=' << (key == "category_file" ? std::string() : field.get(*this)) << '\n';
    }
    return os.str();
  }

  static RunConfig parse(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::string preset_name = "toy";
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key == "preset") {
        preset_name = value;
        continue;
      }
      kv.emplace_back(std::move(key), std::move(value));
    }
    RunConfig c;
    if (preset_name == "vit_b16") {
      c = vit_b16();
    } else if (preset_name != "toy") {
      throw ConfigError("unknown preset: " + preset_name);
    }
    const auto table = fields();
    for (const auto& [key, value] : kv) {
      auto it = table.find(key);
      if (it == table.end()) throw ConfigError("unknown config key: " + key);
      it->second.set(c, value);
    }
    c.text.embed_dim = c.event.embed_dim;
    if (!c.category_file.empty()) c.categories = read_category_file(c.category_file);
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  /// One category name per line; index = line number (blank lines skipped).
  static std::vector<std::string> read_category_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read category file " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
      line = trim(line);
      if (!line.empty()) out.push_back(line);
    }
    return out;
  }

 private:
  struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
  };

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  template <typename T>
  static T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError("invalid number for " + key + ": '" + v + "'");
    return out;
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
  }

  static std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  static std::map<std::string, Field> fields() {
    std::map<std::string, Field> f;
    auto num = [&](const std::string& key, auto getter) {
      using Ref = decltype(getter(std::declval<RunConfig&>()));
      using T = std::remove_reference_t<Ref>;
      f[key] = Field{[getter](const RunConfig& c) {
                       auto& cc = const_cast<RunConfig&>(c);
                       if constexpr (std::is_floating_point_v<T>) {
                         return fmt_double(getter(cc));
                       } else {
                         return std::to_string(getter(cc));
                       }
                     },
                     [key, getter](RunConfig& c, const std::string& v) {
                       if constexpr (std::is_floating_point_v<T>) {
                         getter(c) = parse_number<double>(key, v);
                       } else {
                         getter(c) = parse_number<T>(key, v);
                       }
                     }};
    };
    auto flag = [&](const std::string& key, auto getter) {
      f[key] = Field{[getter](const RunConfig& c) { return std::string(getter(const_cast<RunConfig&>(c)) ? "true" : "false"); },
                     [key, getter](RunConfig& c, const std::string& v) { getter(c) = parse_bool(key, v); }};
    };
    auto str = [&](const std::string& key, auto getter) {
      f[key] = Field{[getter](const RunConfig& c) { return getter(const_cast<RunConfig&>(c)); },
                     [getter](RunConfig& c, const std::string& v) { getter(c) = v; }};
    };

    num("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    f["categories"] = Field{[](const RunConfig& c) {
                              std::string s;
                              for (std::size_t i = 0; i < c.categories.size(); ++i) s += (i ? "," : "") + c.categories[i];
                              return s;
                            },
                            [](RunConfig& c, const std::string& v) {
                              c.categories.clear();
                              std::stringstream ss(v);
                              std::string item;
                              while (std::getline(ss, item, ',')) {
                                item = trim(item);
                                if (!item.empty()) c.categories.push_back(item);
                              }
                            }};
    str("category_file", [](RunConfig& c) -> std::string& { return c.category_file; });
    num("train_per_category", [](RunConfig& c) -> int& { return c.train_per_category; });
    num("val_per_category", [](RunConfig& c) -> int& { return c.val_per_category; });
    num("sensor_size", [](RunConfig& c) -> int& { return c.sensor_size; });
    str("data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; });
    num("sim_steps", [](RunConfig& c) -> int& { return c.simulator.steps; });
    num("sim_size_min", [](RunConfig& c) -> double& { return c.simulator.size_lo; });
    num("sim_size_max", [](RunConfig& c) -> double& { return c.simulator.size_hi; });
    num("sim_speed_min", [](RunConfig& c) -> double& { return c.simulator.speed_lo; });
    num("sim_speed_max", [](RunConfig& c) -> double& { return c.simulator.speed_hi; });
    num("sim_start_spread", [](RunConfig& c) -> double& { return c.simulator.start_spread; });

    num("events_total", [](RunConfig& c) -> std::int64_t& { return c.representation.total_events; });
    num("events_per_frame", [](RunConfig& c) -> std::int64_t& { return c.representation.events_per_frame; });
    num("target_resolution", [](RunConfig& c) -> int& { return c.representation.target_resolution; });

    num("image_size", [](RunConfig& c) -> int& { return c.event.image_size; });
    num("patch", [](RunConfig& c) -> int& { return c.event.patch; });
    num("width", [](RunConfig& c) -> int& { return c.event.width; });
    num("layers", [](RunConfig& c) -> int& { return c.event.layers; });
    num("heads", [](RunConfig& c) -> int& { return c.event.heads; });
    num("frames", [](RunConfig& c) -> int& { return c.event.frames; });
    num("event_prompts", [](RunConfig& c) -> int& { return c.event.prompts; });
    num("embed_dim", [](RunConfig& c) -> int& { return c.event.embed_dim; });
    flag("use_event_prompts", [](RunConfig& c) -> bool& { return c.event.event_prompts; });
    flag("use_temporal_modeling", [](RunConfig& c) -> bool& { return c.event.temporal_modeling; });
    flag("per_frame_prompts", [](RunConfig& c) -> bool& { return c.event.per_frame_prompts; });
    num("image_layers", [](RunConfig& c) -> int& { return c.image_layers; });

    num("text_width", [](RunConfig& c) -> int& { return c.text.width; });
    num("text_layers", [](RunConfig& c) -> int& { return c.text.layers; });
    num("text_heads", [](RunConfig& c) -> int& { return c.text.heads; });
    num("text_context", [](RunConfig& c) -> int& { return c.text.context; });
    num("learnable_prompts", [](RunConfig& c) -> int& { return c.text.learnable_prompts; });
    flag("use_hybrid_prompts", [](RunConfig& c) -> bool& { return c.text.hybrid_prompts; });
    flag("use_content_prompts", [](RunConfig& c) -> bool& { return c.content_prompts; });
    flag("separate_content_mlps", [](RunConfig& c) -> bool& { return c.separate_content_mlps; });
    flag("query_conditioned_text", [](RunConfig& c) -> bool& { return c.query_conditioned_text; });
    str("template", [](RunConfig& c) -> std::string& { return c.text.tmpl; });

    num("alpha", [](RunConfig& c) -> double& { return c.weights.alpha; });
    num("beta", [](RunConfig& c) -> double& { return c.weights.beta; });
    num("theta", [](RunConfig& c) -> double& { return c.weights.theta; });
    num("gamma", [](RunConfig& c) -> double& { return c.weights.gamma; });
    flag("symmetric_loss", [](RunConfig& c) -> bool& { return c.symmetric_loss; });
    flag("no_image", [](RunConfig& c) -> bool& { return c.no_image; });
    num("init_temperature", [](RunConfig& c) -> double& { return c.init_temperature; });
    flag("learnable_temperature", [](RunConfig& c) -> bool& { return c.learnable_temperature; });

    num("lr", [](RunConfig& c) -> double& { return c.lr; });
    num("weight_decay", [](RunConfig& c) -> double& { return c.weight_decay; });
    num("min_lr", [](RunConfig& c) -> double& { return c.min_lr; });
    num("epochs", [](RunConfig& c) -> int& { return c.epochs; });
    num("batch_size", [](RunConfig& c) -> int& { return c.batch_size; });
    num("few_shot_k", [](RunConfig& c) -> int& { return c.few_shot_k; });
    num("eval_every", [](RunConfig& c) -> int& { return c.eval_every; });
    num("early_stop_train_acc", [](RunConfig& c) -> double& { return c.early_stop_train_acc; });
    num("max_batches_per_epoch", [](RunConfig& c) -> int& { return c.max_batches_per_epoch; });
    flag("train_image_encoder", [](RunConfig& c) -> bool& { return c.train_image_encoder; });
    flag("train_text_encoder", [](RunConfig& c) -> bool& { return c.train_text_encoder; });
    flag("augment", [](RunConfig& c) -> bool& { return c.augment; });

    str("out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; });
    return f;
  }
};

}  // namespace eventbind::harness
