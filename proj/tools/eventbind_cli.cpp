// eventbind: data generation, training, evaluation, retrieval and frame
// inspection from the command line.
//
// Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime
// failure (I/O, malformed data, divergence).

#include "eventbind/errors.hpp"
#include "eventbind/event_representation.hpp"
#include "eventbind/formats.hpp"
#include "eventbind/harness/checkpoint.hpp"
#include "eventbind/harness/config.hpp"
#include "eventbind/harness/dataset_io.hpp"
#include "eventbind/harness/eval.hpp"
#include "eventbind/harness/model.hpp"
#include "eventbind/harness/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

namespace {

using namespace eventbind;
using namespace eventbind::harness;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> few_shot_k;
  bool no_image = false;
  std::string out_dir;

  void add_to(CLI::App* app, bool with_out_dir) {
    app->add_option("--seed", seed, "Override the config seed");
    app->add_option("--few-shot-k", few_shot_k, "Train on k samples per category (0: full set)");
    app->add_flag("--no-image", no_image, "Image-absent mode: event-text term only");
    if (with_out_dir) app->add_option("--out-dir", out_dir, "Override out_dir");
  }

  void apply(RunConfig& c) const {
    if (seed) c.seed = *seed;
    if (few_shot_k) c.few_shot_k = *few_shot_k;
    if (no_image) c.no_image = true;
    if (!out_dir.empty()) c.out_dir = out_dir;
  }
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_recall(const std::array<std::optional<double>, 3>& r) {
  std::string s;
  for (std::size_t i = 0; i < kRecallKs.size(); ++i) {
    s += " R@" + std::to_string(kRecallKs[i]) + "=" + (r[i] ? fmt(*r[i]) : std::string("n/a"));
  }
  return s;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, const Overrides& ov, const std::string& out) {
  RunConfig cfg = config_path.empty() ? RunConfig::toy() : RunConfig::load(config_path);
  ov.apply(cfg);
  cfg.data_dir.clear();
  cfg.few_shot_k = 0;
  cfg.validate();
  const auto [train_set, val_set] = load_datasets(cfg);
  write_dataset(out, train_set, val_set);
  std::cout << "wrote " << train_set.samples.size() << " train + " << val_set.samples.size() << " val samples, " << cfg.categories.size()
            << " categories, to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov) {
  RunConfig cfg = RunConfig::load(config_path);
  ov.apply(cfg);
  cfg.validate();
  EventBindModel model(cfg);
  const auto [train_set, val_set] = load_datasets(cfg);
  std::cout << "training on " << train_set.samples.size() << " samples (" << val_set.samples.size() << " val), " << model.params().scalar_count()
            << " parameters, " << cfg.structure() << "\n";
  TrainOptions opts;
  opts.on_record = [](const Record& r) {
    if (r["kind"] != "epoch") return;
    std::cout << "epoch " << r["epoch"].get<int>() << "  loss " << fmt(r["mean_loss"].get<double>()) << "  train_acc " << fmt(r["train_acc"].get<double>());
    if (!r["val_acc"].is_null()) std::cout << "  val_acc " << fmt(r["val_acc"].get<double>());
    std::cout << "  tau " << fmt(r["tau"].get<double>()) << "  " << fmt(r["wall_s"].get<double>(), 1) << "s\n" << std::flush;
  };
  const TrainOutcome out = train(model, train_set, val_set, opts);
  const std::filesystem::path dir = cfg.out_dir;
  std::cout << "steps " << out.steps << ", epochs " << out.epochs_run << ", best epoch " << out.best_epoch << " (score " << fmt(out.best_score) << ")\n"
            << "wrote " << (dir / "metrics.ndjson").string() << ", " << (dir / "best.ebck").string() << ", " << (dir / "checkpoint.ebck").string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const Overrides& ov, const std::string& checkpoint, const std::string& split) {
  RunConfig cfg = RunConfig::load(config_path);
  ov.apply(cfg);
  cfg.validate();
  if (split != "train" && split != "val") throw ConfigError("--split must be train or val");
  EventBindModel model(cfg);
  if (!checkpoint.empty()) Checkpoint::load(checkpoint).restore(model.params());
  const auto [train_set, val_set] = load_datasets(cfg);
  const Dataset& d = split == "train" ? train_set : val_set;
  if (d.samples.empty()) throw ConfigError("split '" + split + "' is empty");
  const auto samples = prepare(d, cfg.representation);
  const EvalResult r = evaluate(model, samples);
  const double chance = 1.0 / static_cast<double>(model.num_categories());
  std::cout << "split " << split << ", " << samples.size() << " samples\n";
  std::cout << "accuracy " << fmt(r.accuracy);
  if (checkpoint.empty()) {
    std::cout << "  [chance baseline: untrained model, 1/N_cls = " << fmt(chance) << "]";
  }
  std::cout << "\ntext->event " << fmt_recall(r.text_to_event) << "\n";
  if (!cfg.no_image) std::cout << "image->event" << fmt_recall(r.image_to_event) << "\n";
  return 0;
}

int cmd_retrieve(const std::string& checkpoint, const std::string& config_path, const std::string& query_text, std::optional<int> query_sample,
                 int k, const std::string& split) {
  if (query_text.empty() == !query_sample.has_value()) throw ConfigError("give exactly one of --query-text or --query-sample");
  if (k < 1) throw ConfigError("--k must be >= 1");
  if (split != "train" && split != "val") throw ConfigError("--split must be train or val");
  const Checkpoint ck = Checkpoint::load(checkpoint);
  RunConfig cfg = config_path.empty() ? RunConfig::parse(ck.config) : RunConfig::load(config_path);
  cfg.validate();
  EventBindModel model(cfg);
  ck.restore(model.params());
  const auto [train_set, val_set] = load_datasets(cfg);
  const Dataset& d = split == "train" ? train_set : val_set;
  const auto gallery = prepare(d, cfg.representation);
  if (gallery.empty()) throw ConfigError("gallery split '" + split + "' is empty");
  if (static_cast<std::size_t>(k) > gallery.size()) throw ConfigError("--k exceeds gallery size " + std::to_string(gallery.size()));

  std::vector<double> scores(gallery.size());
  std::string label;
  if (!query_text.empty()) {
    const int c = model.text_encoder().category_index(query_text);
    label = "text '" + query_text + "'";
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const auto q = model.query(gallery[g].frames);
      scores[g] = q.text.row(c).dot(q.embedding);
    }
  } else {
    auto it = std::find_if(gallery.begin(), gallery.end(), [&](const PreparedSample& s) { return s.id == *query_sample; });
    if (it == gallery.end()) throw ConfigError("sample " + std::to_string(*query_sample) + " is not in the " + split + " split");
    label = "image of sample " + std::to_string(it->id) + " (" + cfg.categories[static_cast<std::size_t>(it->category)] + ")";
    const Eigen::RowVectorXd qi = model.image_embedding(it->image);
    for (std::size_t g = 0; g < gallery.size(); ++g) scores[g] = qi.dot(model.event_embedding(gallery[g].frames));
  }
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::cout << "query " << label << ", gallery " << split << " (" << gallery.size() << " event samples)\n";
  std::cout << "rank\tid\tcategory\tscore\n";
  for (int i = 0; i < k; ++i) {
    const auto& s = gallery[order[static_cast<std::size_t>(i)]];
    std::cout << i + 1 << '\t' << s.id << '\t' << cfg.categories[static_cast<std::size_t>(s.category)] << '\t' << fmt(scores[order[static_cast<std::size_t>(i)]], 6)
              << '\n';
  }
  return 0;
}

int cmd_inspect(const std::string& input, std::int64_t total, std::int64_t per_frame, const std::string& out) {
  const RepresentationConfig rep{total, per_frame, 32};
  rep.validate();
  const EventStream s = formats::read_evt1(input);
  std::size_t pos = 0;
  for (const auto& e : s.events) pos += e.polarity > 0 ? 1 : 0;
  std::cout << "file " << input << "\n"
            << "sensor " << s.width << "x" << s.height << ", " << s.events.size() << " events (" << pos << " positive, " << s.events.size() - pos
            << " negative)\n";
  if (!s.events.empty()) std::cout << "time " << s.events.front().t_us << " .. " << s.events.back().t_us << " us\n";
  if (static_cast<std::int64_t>(s.events.size()) < total) {
    std::cout << "stream shorter than events_total=" << total << ": " << total - static_cast<std::int64_t>(s.events.size()) << " padding slots\n";
  }
  const ByteFrames f = events_to_byte_frames(s, rep);
  std::cout << "frames " << f.frames << " x " << f.height << " x " << f.width << " x " << f.channels << "\n";
  for (int t = 0; t < f.frames; ++t) {
    int lit = 0;
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) lit += (f.at(t, y, x, 0) || f.at(t, y, x, 1) || f.at(t, y, x, 2)) ? 1 : 0;
    }
    std::cout << "  frame " << t << ": " << lit << " active pixels\n";
  }
  if (!out.empty()) {
    formats::write_efr1(out, f);
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EventBind toy-scale event/image/text alignment"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, split = "val", query_text, input, frames_out;
  std::optional<int> query_sample;
  int k = 5;
  std::int64_t events_total = 1024, events_per_frame = 256;
  Overrides gen_ov, train_ov, eval_ov;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset directory (EVT1 events + EFR1 images)");
  gen->add_option("--config", config, "Run config (default: toy preset)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", gen_ov.seed, "Override the config seed");

  auto* tr = app.add_subcommand("train", "Train a model; writes metrics.ndjson, best.ebck and checkpoint.ebck to out_dir");
  tr->add_option("--config", config, "Run config")->required();
  train_ov.add_to(tr, true);

  auto* ev = app.add_subcommand("eval", "Recognition accuracy and Recall@{1,5,10} on a split");
  ev->add_option("--config", config, "Run config")->required();
  ev->add_option("--checkpoint", checkpoint, "EBCK checkpoint (omit to evaluate the untrained model)");
  ev->add_option("--split", split, "train or val")->capture_default_str();
  eval_ov.add_to(ev, false);

  auto* rt = app.add_subcommand("retrieve", "Rank event samples for a text or image query");
  checkpoint = "runs/toy/best.ebck";
  rt->add_option("--checkpoint", checkpoint, "EBCK checkpoint; its config snapshot is used unless --config is given")->capture_default_str();
  rt->add_option("--config", config, "Run config overriding the checkpoint snapshot");
  rt->add_option("--query-text", query_text, "Category name");
  rt->add_option("--query-sample", query_sample, "Use the paired image of this sample id as the query");
  rt->add_option("--k", k, "Number of results")->capture_default_str();
  rt->add_option("--split", split, "Gallery split: train or val")->capture_default_str();

  auto* in = app.add_subcommand("inspect-frames", "Summarize an EVT1 file and its frame representation");
  in->add_option("input", input, "EVT1 file")->required();
  in->add_option("--events-total", events_total, "P, events kept per sample")->capture_default_str();
  in->add_option("--events-per-frame", events_per_frame, "Q, events per frame")->capture_default_str();
  in->add_option("--out", frames_out, "Write the frames as EFR1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(config, gen_ov, out);
    if (*tr) return cmd_train(config, train_ov);
    if (*ev) return cmd_eval(config, eval_ov, ev->count("--checkpoint") ? checkpoint : std::string(), split);
    if (*rt) return cmd_retrieve(checkpoint, config, query_text, query_sample, k, split);
    if (*in) return cmd_inspect(input, events_total, events_per_frame, frames_out);
  } catch (const ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
