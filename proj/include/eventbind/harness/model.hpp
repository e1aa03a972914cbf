#pragma once

#include "eventbind/autodiff.hpp"
#include "eventbind/event_encoder.hpp"
#include "eventbind/event_representation.hpp"
#include "eventbind/harness/config.hpp"
#include "eventbind/harness/synthetic.hpp"
#include "eventbind/htca.hpp"
#include "eventbind/nn.hpp"
#include "eventbind/text_image_encoders.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace eventbind::harness {

/// A sample with its frame tensor computed once and its image resized to
/// the same resolution.
struct PreparedSample {
  int id = 0;
  int category = 0;
  Frames frames;
  std::vector<double> image;
};

inline std::vector<double> resize_image(const std::vector<double>& image, int size, int target) {
  if (size == target) return image;
  Frames img(1, size, size, 3);
  if (img.values.size() != image.size()) throw std::invalid_argument("image does not match sensor size");
  img.values = image;
  return resize_frames(img, target).values;
}

inline std::vector<PreparedSample> prepare(const Dataset& d, const RepresentationConfig& rep) {
  std::vector<PreparedSample> out;
  out.reserve(d.samples.size());
  for (const auto& s : d.samples) {
    out.push_back(PreparedSample{s.id, s.category, events_to_frames(s.events, rep), resize_image(s.image, d.sensor_size, rep.target_resolution)});
  }
  return out;
}

enum class Modality { kEvent, kImage };

/// Per-sample embeddings on a tape.
struct SampleEmbeddings {
  ad::Var event;
  std::optional<ad::Var> image;
  TextEmbedding text_event;
  std::optional<TextEmbedding> text_image;
};

class EventBindModel {
 public:
  explicit EventBindModel(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed ^ 0xE5E17B1DULL);
    event_ = std::make_unique<EventEncoder>(store_, rng, cfg_.event, "event");
    image_ = std::make_unique<ImageEncoder>(store_, rng, cfg_.image_geometry(), "image");
    text_ = std::make_unique<TextEncoder>(store_, rng, cfg_.text, cfg_.categories, "text");
    const int d = cfg_.event.embed_dim;
    if (cfg_.separate_content_mlps) {
      mlp_event_ = std::make_unique<ContentPromptMLP>(store_, rng, "content_mlp.event", d, cfg_.text.width);
      mlp_image_ = std::make_unique<ContentPromptMLP>(store_, rng, "content_mlp.image", d, cfg_.text.width);
    } else {
      mlp_event_ = std::make_unique<ContentPromptMLP>(store_, rng, "content_mlp", d, cfg_.text.width);
    }
    log_tau_ = &store_.add("temperature.log_tau", ad::Mat::Constant(1, 1, std::log(cfg_.init_temperature)));

    if (!cfg_.train_image_encoder) store_.set_trainable("image.", false);
    if (!cfg_.train_text_encoder) {
      store_.set_trainable("text.", false);
      if (store_.contains("text.learnable_prompts")) store_.at("text.learnable_prompts").trainable = true;
    }
    if (!cfg_.learnable_temperature) log_tau_->trainable = false;
  }

  EventBindModel(const EventBindModel&) = delete;
  EventBindModel& operator=(const EventBindModel&) = delete;

  [[nodiscard]] const RunConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  [[nodiscard]] const nn::ParamStore& params() const { return store_; }
  [[nodiscard]] const EventEncoder& event_encoder() const { return *event_; }
  [[nodiscard]] const ImageEncoder& image_encoder() const { return *image_; }
  [[nodiscard]] const TextEncoder& text_encoder() const { return *text_; }
  [[nodiscard]] int num_categories() const { return static_cast<int>(cfg_.categories.size()); }

  [[nodiscard]] double temperature_value() const {
    return std::clamp(std::exp(log_tau_->value(0, 0)), htca::kMinTemperature, htca::kMaxTemperature);
  }

  ad::Var temperature(ad::Tape& t) const { return htca::temperature(t, *log_tau_); }

  /// sigma_m for an embedding, or nullopt when content prompts are disabled.
  std::optional<ad::Var> content_prompt(ad::Tape& t, ad::Var embedding, Modality m) const {
    if (!cfg_.content_prompts) return std::nullopt;
    const ContentPromptMLP& mlp = (m == Modality::kImage && mlp_image_) ? *mlp_image_ : *mlp_event_;
    return mlp(t, embedding);
  }

  SampleEmbeddings embed_sample(ad::Tape& t, const PreparedSample& s, bool with_image, bool with_text_image) const {
    SampleEmbeddings e;
    e.event = event_->encode(t, s.frames);
    e.text_event = text_->encode_category(t, s.category, content_prompt(t, e.event, Modality::kEvent));
    if (with_image) {
      e.image = image_->encode(t, s.image);
      if (with_text_image) e.text_image = text_->encode_category(t, s.category, content_prompt(t, *e.image, Modality::kImage));
    }
    return e;
  }

  /// Full objective over one mini-batch. With query-conditioned text, the
  /// event-text term scores event n against every batch category's text
  /// built from event n's content prompt, the same scoring used for
  /// recognition.
  htca::LossResult batch_loss(ad::Tape& t, std::span<const PreparedSample* const> batch) const {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const htca::LossWeights w = cfg_.effective_weights();
    const bool image_absent = cfg_.no_image;
    const bool need_image = !image_absent && (w.alpha != 0.0 || w.theta != 0.0 || w.gamma != 0.0);
    const bool conditioned = cfg_.query_conditioned_text && cfg_.content_prompts;
    std::vector<ad::Var> fe, fi, fte, fti, le, he, li, hi, sim_rows;
    auto keep = [](const TextEmbedding& e, std::vector<ad::Var>& combined, std::vector<ad::Var>& l, std::vector<ad::Var>& h) {
      combined.push_back(e.combined);
      if (e.learnable) {
        l.push_back(*e.learnable);
        h.push_back(e.handcrafted);
      }
    };
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const PreparedSample& s = *batch[n];
      const ad::Var event = event_->encode(t, s.frames);
      fe.push_back(event);
      const auto sigma_e = content_prompt(t, event, Modality::kEvent);
      if (conditioned) {
        std::vector<ad::Var> texts;
        for (std::size_t m = 0; m < batch.size(); ++m) {
          TextEmbedding e = text_->encode_category(t, batch[m]->category, sigma_e);
          texts.push_back(e.combined);
          if (m == n) keep(e, fte, le, he);
        }
        sim_rows.push_back(ad::matmul_nt(event, ad::vconcat(texts)));
      } else {
        keep(text_->encode_category(t, s.category, sigma_e), fte, le, he);
      }
      if (need_image) {
        const ad::Var image = image_->encode(t, s.image);
        fi.push_back(image);
        keep(text_->encode_category(t, s.category, content_prompt(t, image, Modality::kImage)), fti, li, hi);
      }
    }
    htca::HtcaInputs in;
    in.event = ad::vconcat(fe);
    in.text_event = ad::vconcat(fte);
    if (conditioned) in.event_text_similarity = ad::vconcat(sim_rows);
    if (!fi.empty()) in.image = ad::vconcat(fi);
    if (!fti.empty()) in.text_image = ad::vconcat(fti);
    if (!image_absent && !le.empty()) in.branches.emplace_back(ad::vconcat(le), ad::vconcat(he));
    if (!image_absent && !li.empty()) in.branches.emplace_back(ad::vconcat(li), ad::vconcat(hi));
    return htca::total_loss(in, w, temperature(t), image_absent, cfg_.symmetric_loss);
  }

  // -------------------------------------------------------------------------
  // Inference (no gradients)

  [[nodiscard]] Eigen::RowVectorXd event_embedding(const Frames& frames) const {
    ad::Tape t(false);
    return event_->encode(t, frames).value().row(0);
  }

  [[nodiscard]] Eigen::RowVectorXd image_embedding(std::span<const double> image) const {
    ad::Tape t(false);
    return image_->encode(t, image).value().row(0);
  }

  /// N_cls x D' unit-norm text embeddings, conditioned on an event
  /// embedding through the content prompt when one is given.
  [[nodiscard]] ad::Mat text_matrix(const Eigen::RowVectorXd* condition, Modality m = Modality::kEvent) const {
    ad::Tape t(false);
    std::optional<ad::Var> sigma;
    if (condition) sigma = content_prompt(t, t.constant(ad::Mat(*condition)), m);
    ad::Mat out(num_categories(), cfg_.event.embed_dim);
    for (int c = 0; c < num_categories(); ++c) out.row(c) = text_->encode_category(t, c, sigma).combined.value().row(0);
    return out;
  }

  /// Event embedding and the text matrix it is scored against.
  struct EventQuery {
    Eigen::RowVectorXd embedding;
    ad::Mat text;
  };

  [[nodiscard]] EventQuery query(const Frames& frames) const {
    EventQuery q;
    q.embedding = event_embedding(frames);
    q.text = text_matrix(cfg_.content_prompts ? &q.embedding : nullptr);
    return q;
  }

 private:
  RunConfig cfg_;
  nn::ParamStore store_;
  std::unique_ptr<EventEncoder> event_;
  std::unique_ptr<ImageEncoder> image_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<ContentPromptMLP> mlp_event_;
  std::unique_ptr<ContentPromptMLP> mlp_image_;
  ad::Param* log_tau_ = nullptr;
};

}  // namespace eventbind::harness
