#pragma once

// Prompt-augmented transformer over T event frames.
//
// Per layer s, for every frame t the block sees
//   [CLS, event prompts (n_e), message tokens (n_d = L), cross-frame token]
// and only CLS + message tokens survive into layer s+1. The cross-frame
// token for frame t is produced by a dedicated self-attention over the
// layer-normed CLS tokens of all T frames. The final CLS of each frame is
// projected to the embedding width, averaged over frames and L2-normalized.

#include "eventbind/autodiff.hpp"
#include "eventbind/errors.hpp"
#include "eventbind/event_representation.hpp"
#include "eventbind/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace eventbind {

struct EncoderGeometry {
  int image_size = 32;  // H = W
  int patch = 8;
  int width = 64;       // D
  int layers = 4;       // S
  int heads = 4;
  int frames = 4;       // T
  int prompts = 4;      // n_e
  int embed_dim = 64;   // D'
  bool event_prompts = true;
  bool temporal_modeling = true;  // temporal encoding + cross-frame prompts
  bool per_frame_prompts = false;
  double input_scale = 1.0 / 255.0;

  [[nodiscard]] int tokens() const { return (image_size / patch) * (image_size / patch); }  // L
  [[nodiscard]] int patch_dim() const { return 3 * patch * patch; }

  void validate() const {
    if (image_size <= 0 || patch <= 0 || image_size % patch != 0) throw ConfigError("image_size must be a positive multiple of patch");
    if (width <= 0 || heads <= 0 || width % heads != 0) throw ConfigError("width must be a positive multiple of heads");
    if (layers < 1) throw ConfigError("encoder needs at least one layer");
    if (frames < 1) throw ConfigError("frame count must be >= 1");
    if (prompts < 0) throw ConfigError("prompt count must be >= 0");
    if (embed_dim <= 0) throw ConfigError("embed_dim must be >= 1");
  }
};

/// Flattens an H x W x 3 frame (channels innermost) into L rows of 3*P*P
/// values, patches row-major, each patch ordered (dy, dx, channel).
inline ad::Mat flatten_patches(std::span<const double> frame, int height, int width, int patch, double scale = 1.0) {
  if (height % patch != 0 || width % patch != 0) throw ConfigError("frame size not divisible by patch size");
  if (frame.size() != static_cast<std::size_t>(height) * width * 3) throw ConfigError("frame buffer size mismatch");
  const int ph = height / patch;
  const int pw = width / patch;
  ad::Mat m(ph * pw, 3 * patch * patch);
  for (int py = 0; py < ph; ++py) {
    for (int px = 0; px < pw; ++px) {
      const int row = py * pw + px;
      int col = 0;
      for (int dy = 0; dy < patch; ++dy) {
        const std::size_t base = (static_cast<std::size_t>(py * patch + dy) * width + px * patch) * 3;
        for (int k = 0; k < patch * 3; ++k) m(row, col++) = frame[base + static_cast<std::size_t>(k)] * scale;
      }
    }
  }
  return m;
}

/// Optional introspection of a forward pass.
struct EventEncoderTrace {
  std::vector<int> sequence_lengths;     // length entering each layer (frame 0)
  std::vector<ad::Mat> frame_cls;        // final per-frame CLS after projection, 1 x D'
  ad::Mat pre_norm;                      // averaged embedding before L2 normalization
  nn::AttentionProbe attention;          // every attention matrix computed
};

class EventEncoder {
 public:
  EventEncoder(nn::ParamStore& store, Rng& rng, EncoderGeometry g, const std::string& prefix = "event") : geo_(g) {
    geo_.validate();
    const int d = geo_.width;
    const int l = geo_.tokens();
    patch_embed_ = &store.add(prefix + ".patch_embed", nn::gaussian(rng, geo_.patch_dim(), d, 1.0 / std::sqrt(static_cast<double>(geo_.patch_dim()))));
    cls_ = &store.add(prefix + ".cls", nn::gaussian(rng, 1, d, 0.02));
    ln_pre_ = nn::LayerNorm(store, prefix + ".ln_pre", d);
    spatial_ = &store.add(prefix + ".pos_spatial", nn::gaussian(rng, 1 + l, d, 0.02));
    temporal_ = &store.add(prefix + ".pos_temporal", nn::gaussian(rng, geo_.frames, d, 0.02));
    const int prompt_rows = geo_.per_frame_prompts ? geo_.frames * geo_.prompts : geo_.prompts;
    for (int s = 0; s < geo_.layers; ++s) {
      const std::string ls = prefix + ".layers." + std::to_string(s);
      prompts_.push_back(prompt_rows > 0 ? &store.add(ls + ".prompts", nn::gaussian(rng, prompt_rows, d, 0.02)) : nullptr);
      cross_ln_.emplace_back(store, ls + ".cross.ln", d);
      cross_attn_.emplace_back(store, rng, ls + ".cross.attn", d, geo_.heads);
      blocks_.emplace_back(store, rng, ls + ".block", d, geo_.heads);
    }
    ln_post_ = nn::LayerNorm(store, prefix + ".ln_post", d);
    proj_ = &store.add(prefix + ".proj", nn::gaussian(rng, d, geo_.embed_dim, 1.0 / std::sqrt(static_cast<double>(d))));
  }

  [[nodiscard]] const EncoderGeometry& geometry() const { return geo_; }

  /// LN([CLS, P_emb^T x_1, ..., P_emb^T x_L]) for one frame; (1+L) x D.
  ad::Var patchify_embed(ad::Tape& t, std::span<const double> frame) const {
    ad::Var patches = t.constant(flatten_patches(frame, geo_.image_size, geo_.image_size, geo_.patch, geo_.input_scale));
    ad::Var tokens = ad::matmul(patches, t.param(*patch_embed_));
    return ln_pre_(t, ad::vconcat({t.param(*cls_), tokens}));
  }

  /// seq + e_spatial + e_temporal[frame].
  ad::Var add_temporal_encoding(ad::Tape& t, ad::Var seq, int frame) const {
    if (frame < 0 || frame >= geo_.frames) throw std::out_of_range("frame index out of range");
    ad::Var out = ad::add(seq, t.param(*spatial_));
    if (!geo_.temporal_modeling) return out;
    return ad::add_row(out, ad::rows(t.param(*temporal_), frame, 1));
  }

  /// Att(LN(CLS tokens of all frames)); T x D.
  ad::Var cross_frame_prompts(ad::Tape& t, ad::Var cls_tokens, int layer, nn::AttentionProbe* probe = nullptr) const {
    const auto s = static_cast<std::size_t>(layer);
    return cross_attn_.at(s)(t, cross_ln_.at(s)(t, cls_tokens), false, probe);
  }

  /// One prompt-augmented block per frame. cross may be null (Var with id < 0)
  /// to omit the cross-frame token.
  std::vector<ad::Var> encoder_layer(ad::Tape& t, const std::vector<ad::Var>& seqs, int layer, ad::Var cross,
                                     nn::AttentionProbe* probe = nullptr) const {
    const auto s = static_cast<std::size_t>(layer);
    const bool use_prompts = geo_.event_prompts && prompts_.at(s) != nullptr;
    const bool use_cross = cross.id >= 0;
    std::vector<ad::Var> next;
    next.reserve(seqs.size());
    for (std::size_t f = 0; f < seqs.size(); ++f) {
      const ad::Var& seq = seqs[f];
      if (seq.cols() != geo_.width) throw std::invalid_argument("token width mismatch");
      const Eigen::Index n_d = seq.rows() - 1;
      std::vector<ad::Var> parts{ad::rows(seq, 0, 1)};
      int n_prompt = 0;
      if (use_prompts) {
        ad::Var p = t.param(*prompts_[s]);
        if (geo_.per_frame_prompts) p = ad::rows(p, static_cast<Eigen::Index>(f) * geo_.prompts, geo_.prompts);
        parts.push_back(p);
        n_prompt = geo_.prompts;
      }
      parts.push_back(ad::rows(seq, 1, n_d));
      if (use_cross) parts.push_back(ad::rows(cross, static_cast<Eigen::Index>(f), 1));
      ad::Var out = blocks_[s](t, ad::vconcat(parts), false, probe);
      next.push_back(ad::vconcat({ad::rows(out, 0, 1), ad::rows(out, 1 + n_prompt, n_d)}));
    }
    return next;
  }

  /// Returns the 1 x D' unit-norm event embedding.
  ad::Var encode(ad::Tape& t, const Frames& frames, EventEncoderTrace* trace = nullptr) const {
    ad::Var pre = encode_unnormalized(t, frames, trace);
    return ad::l2_normalize_rows(pre);
  }

  ad::Var encode_unnormalized(ad::Tape& t, const Frames& frames, EventEncoderTrace* trace = nullptr) const {
    if (frames.frames != geo_.frames || frames.height != geo_.image_size || frames.width != geo_.image_size || frames.channels != 3) {
      throw ConfigError("frame tensor shape does not match encoder geometry");
    }
    nn::AttentionProbe* probe = trace ? &trace->attention : nullptr;
    std::vector<ad::Var> seqs;
    for (int f = 0; f < geo_.frames; ++f) seqs.push_back(add_temporal_encoding(t, patchify_embed(t, frames.frame(f)), f));
    for (int s = 0; s < geo_.layers; ++s) {
      if (trace) trace->sequence_lengths.push_back(static_cast<int>(seqs.front().rows()));
      ad::Var cross{};
      if (geo_.temporal_modeling) {
        std::vector<ad::Var> cls;
        for (const auto& q : seqs) cls.push_back(ad::rows(q, 0, 1));
        cross = cross_frame_prompts(t, ad::vconcat(cls), s, probe);
      }
      seqs = encoder_layer(t, seqs, s, cross, probe);
    }
    std::vector<ad::Var> cls;
    for (const auto& q : seqs) cls.push_back(ad::rows(q, 0, 1));
    ad::Var projected = ad::matmul(ln_post_(t, ad::vconcat(cls)), t.param(*proj_));  // T x D'
    if (trace) {
      for (Eigen::Index f = 0; f < projected.rows(); ++f) trace->frame_cls.push_back(projected.value().row(f));
    }
    ad::Var avg = ad::mean_rows(projected);
    if (trace) trace->pre_norm = avg.value();
    return avg;
  }

 private:
  EncoderGeometry geo_;
  ad::Param* patch_embed_ = nullptr;
  ad::Param* cls_ = nullptr;
  nn::LayerNorm ln_pre_;
  ad::Param* spatial_ = nullptr;
  ad::Param* temporal_ = nullptr;
  std::vector<ad::Param*> prompts_;
  std::vector<nn::LayerNorm> cross_ln_;
  std::vector<nn::MultiHeadAttention> cross_attn_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_post_;
  ad::Param* proj_ = nullptr;
};

}  // namespace eventbind
