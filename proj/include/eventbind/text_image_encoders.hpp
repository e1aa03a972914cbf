#pragma once

// Image encoder (plain ViT), text encoder with hybrid prompts, and the MLP
// that turns an event/image embedding into a content prompt.

#include "eventbind/autodiff.hpp"
#include "eventbind/errors.hpp"
#include "eventbind/event_encoder.hpp"
#include "eventbind/nn.hpp"

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace eventbind {

// ---------------------------------------------------------------------------
// Tokenizer
//
// Deterministic toy tokenizer: lowercase, split on whitespace, split
// punctuation into its own token. Known words map to one id; unknown words
// fall back to one id per character.

class Tokenizer {
 public:
  static constexpr int kSot = 0;
  static constexpr int kEot = 1;

  explicit Tokenizer(const std::vector<std::string>& extra_words = {}) {
    add("<sot>");
    add("<eot>");
    for (const char* w : {"a", "drafted", "image", "of", "photo", ".", ","}) add(w);
    for (char c = 'a'; c <= 'z'; ++c) add(std::string("<c:") + c + ">");
    for (char c = '0'; c <= '9'; ++c) add(std::string("<c:") + c + ">");
    for (char c : std::string_view("-_'")) add(std::string("<c:") + c + ">");
    add("<c:?>");
    for (const auto& w : extra_words) {
      for (const auto& piece : split(w)) add(piece);
    }
  }

  [[nodiscard]] int vocab_size() const { return static_cast<int>(words_.size()); }

  [[nodiscard]] std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& piece : split(text)) {
      if (auto it = index_.find(piece); it != index_.end()) {
        ids.push_back(it->second);
        continue;
      }
      for (char c : piece) {
        auto ci = index_.find(std::string("<c:") + c + ">");
        ids.push_back(ci != index_.end() ? ci->second : index_.at("<c:?>"));
      }
    }
    return ids;
  }

  [[nodiscard]] const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  static std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    };
    for (char raw : text) {
      const auto c = static_cast<unsigned char>(raw);
      if (std::isspace(c)) {
        flush();
      } else if (c == '.' || c == ',') {
        flush();
        out.emplace_back(1, static_cast<char>(c));
      } else {
        cur.push_back(static_cast<char>(std::tolower(c)));
      }
    }
    flush();
    return out;
  }

 private:
  void add(const std::string& w) {
    if (index_.count(w)) return;
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// Image encoder

class ImageEncoder {
 public:
  ImageEncoder(nn::ParamStore& store, Rng& rng, EncoderGeometry g, const std::string& prefix = "image") : geo_(g) {
    geo_.validate();
    const int d = geo_.width;
    patch_embed_ = &store.add(prefix + ".patch_embed", nn::gaussian(rng, geo_.patch_dim(), d, 1.0 / std::sqrt(static_cast<double>(geo_.patch_dim()))));
    cls_ = &store.add(prefix + ".cls", nn::gaussian(rng, 1, d, 0.02));
    pos_ = &store.add(prefix + ".pos", nn::gaussian(rng, 1 + geo_.tokens(), d, 0.02));
    ln_pre_ = nn::LayerNorm(store, prefix + ".ln_pre", d);
    for (int s = 0; s < geo_.layers; ++s) blocks_.emplace_back(store, rng, prefix + ".blocks." + std::to_string(s), d, geo_.heads);
    ln_post_ = nn::LayerNorm(store, prefix + ".ln_post", d);
    proj_ = &store.add(prefix + ".proj", nn::gaussian(rng, d, geo_.embed_dim, 1.0 / std::sqrt(static_cast<double>(d))));
  }

  [[nodiscard]] const EncoderGeometry& geometry() const { return geo_; }

  /// image: H x W x 3 intensities in [0,255]; returns 1 x D' before normalization.
  ad::Var encode_unnormalized(ad::Tape& t, std::span<const double> image) const {
    ad::Var patches = t.constant(flatten_patches(image, geo_.image_size, geo_.image_size, geo_.patch, geo_.input_scale));
    ad::Var x = ad::vconcat({t.param(*cls_), ad::matmul(patches, t.param(*patch_embed_))});
    x = ln_pre_(t, ad::add(x, t.param(*pos_)));
    for (const auto& b : blocks_) x = b(t, x);
    return ad::matmul(ln_post_(t, ad::rows(x, 0, 1)), t.param(*proj_));
  }

  ad::Var encode(ad::Tape& t, std::span<const double> image) const { return ad::l2_normalize_rows(encode_unnormalized(t, image)); }

 private:
  EncoderGeometry geo_;
  ad::Param* patch_embed_ = nullptr;
  ad::Param* cls_ = nullptr;
  ad::Param* pos_ = nullptr;
  nn::LayerNorm ln_pre_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_post_;
  ad::Param* proj_ = nullptr;
};

// ---------------------------------------------------------------------------
// Content prompts

/// Two affine maps with QuickGELU between: D' -> D' -> D_p.
class ContentPromptMLP {
 public:
  ContentPromptMLP(nn::ParamStore& store, Rng& rng, const std::string& prefix, int embed_dim, int prompt_dim)
      : fc1_(store, rng, prefix + ".fc1", embed_dim, embed_dim), fc2_(store, rng, prefix + ".fc2", embed_dim, prompt_dim) {}

  ad::Var operator()(ad::Tape& t, ad::Var embedding) const { return fc2_(t, ad::quick_gelu(fc1_(t, embedding))); }

 private:
  nn::Linear fc1_, fc2_;
};

// ---------------------------------------------------------------------------
// Text encoder with hybrid prompts

struct TextGeometry {
  int width = 64;  // D_p
  int layers = 2;
  int heads = 4;
  int context = 32;
  int learnable_prompts = 4;  // n_l
  int embed_dim = 64;         // D'
  bool hybrid_prompts = true;   // false: hand-crafted branch only
  std::string tmpl = "A drafted image of a {}.";

  void validate() const {
    if (width <= 0 || heads <= 0 || width % heads != 0) throw ConfigError("text width must be a positive multiple of heads");
    if (layers < 1) throw ConfigError("text encoder needs at least one layer");
    if (learnable_prompts < 0) throw ConfigError("learnable prompt count must be >= 0");
    if (tmpl.find("{}") == std::string::npos) throw ConfigError("prompt template needs a {} placeholder");
  }
};

/// Token-embedding sequence for one prompt branch. mask[i] is true where the
/// content prompt was added; cls[i] is true at class-name positions.
struct PromptSequence {
  ad::Var tokens;
  std::vector<int> ids;  // -1 for learnable prompt slots
  std::vector<bool> modulated;
  std::vector<bool> is_class;
};

struct TextInputs {
  PromptSequence handcrafted;
  std::optional<PromptSequence> learnable;
};

struct TextEmbedding {
  ad::Var handcrafted;               // f_h, 1 x D', pre-normalization
  std::optional<ad::Var> learnable;  // f_l, 1 x D', pre-normalization
  ad::Var combined;                  // normalize((f_l + f_h) / 2), 1 x D'
};

class TextEncoder {
 public:
  TextEncoder(nn::ParamStore& store, Rng& rng, TextGeometry g, std::vector<std::string> categories, const std::string& prefix = "text")
      : geo_(std::move(g)), categories_(std::move(categories)), tokenizer_(categories_) {
    geo_.validate();
    if (categories_.empty()) throw ConfigError("category vocabulary is empty");
    const int d = geo_.width;
    token_embedding_ = &store.add(prefix + ".token_embedding", nn::gaussian(rng, tokenizer_.vocab_size(), d, 0.02));
    pos_ = &store.add(prefix + ".pos", nn::gaussian(rng, geo_.context, d, 0.01));
    learnable_ = geo_.learnable_prompts > 0 ? &store.add(prefix + ".learnable_prompts", nn::gaussian(rng, geo_.learnable_prompts, d, 0.02)) : nullptr;
    for (int s = 0; s < geo_.layers; ++s) blocks_.emplace_back(store, rng, prefix + ".blocks." + std::to_string(s), d, geo_.heads);
    ln_final_ = nn::LayerNorm(store, prefix + ".ln_final", d);
    proj_ = &store.add(prefix + ".proj", nn::gaussian(rng, d, geo_.embed_dim, 1.0 / std::sqrt(static_cast<double>(d))));

    const auto brace = geo_.tmpl.find("{}");
    prefix_ids_ = tokenizer_.encode(geo_.tmpl.substr(0, brace));
    suffix_ids_ = tokenizer_.encode(geo_.tmpl.substr(brace + 2));
    for (const auto& c : categories_) {
      class_ids_.push_back(tokenizer_.encode(c));
      if (class_ids_.back().empty()) throw ConfigError("category name has no tokens: '" + c + "'");
      const auto longest = 2 + std::max(prefix_ids_.size(), static_cast<std::size_t>(geo_.learnable_prompts)) + class_ids_.back().size() + suffix_ids_.size();
      if (longest > static_cast<std::size_t>(geo_.context)) throw ConfigError("prompt for '" + c + "' exceeds text context");
    }
  }

  [[nodiscard]] const TextGeometry& geometry() const { return geo_; }
  [[nodiscard]] const std::vector<std::string>& categories() const { return categories_; }
  [[nodiscard]] const Tokenizer& tokenizer() const { return tokenizer_; }

  [[nodiscard]] int category_index(const std::string& name) const {
    for (std::size_t i = 0; i < categories_.size(); ++i) {
      if (categories_[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("unknown category: " + name);
  }

  /// Builds both prompt branches. sigma (1 x D_p) is added to every prompt
  /// token (template words, learnable slots) but not to class tokens or
  /// the start/end markers. Pass std::nullopt for no content prompt.
  TextInputs build_text_inputs(ad::Tape& t, int category, std::optional<ad::Var> sigma) const {
    if (category < 0 || static_cast<std::size_t>(category) >= categories_.size()) throw ConfigError("unknown category index " + std::to_string(category));
    if (sigma && (sigma->rows() != 1 || sigma->cols() != geo_.width)) throw std::invalid_argument("content prompt must be 1 x D_p");
    ad::Var table = t.param(*token_embedding_);
    const auto& cls = class_ids_[static_cast<std::size_t>(category)];

    auto modulate = [&](ad::Var x) { return sigma ? ad::add_row(x, *sigma) : x; };

    TextInputs in;
    {
      PromptSequence s;
      std::vector<ad::Var> parts;
      auto emit = [&](const std::vector<int>& ids, bool mod, bool is_class) {
        if (ids.empty()) return;
        ad::Var x = ad::gather_rows(table, ids);
        parts.push_back(mod ? modulate(x) : x);
        for (int id : ids) {
          s.ids.push_back(id);
          s.modulated.push_back(mod && sigma.has_value());
          s.is_class.push_back(is_class);
        }
      };
      emit({Tokenizer::kSot}, false, false);
      emit(prefix_ids_, true, false);
      emit(cls, false, true);
      emit(suffix_ids_, true, false);
      emit({Tokenizer::kEot}, false, false);
      s.tokens = ad::vconcat(parts);
      in.handcrafted = std::move(s);
    }
    if (geo_.hybrid_prompts) {
      PromptSequence s;
      std::vector<ad::Var> parts;
      auto emit_ids = [&](const std::vector<int>& ids, bool is_class) {
        parts.push_back(ad::gather_rows(table, ids));
        for (int id : ids) {
          s.ids.push_back(id);
          s.modulated.push_back(false);
          s.is_class.push_back(is_class);
        }
      };
      emit_ids({Tokenizer::kSot}, false);
      if (learnable_) {
        parts.push_back(modulate(t.param(*learnable_)));
        for (int i = 0; i < geo_.learnable_prompts; ++i) {
          s.ids.push_back(-1);
          s.modulated.push_back(sigma.has_value());
          s.is_class.push_back(false);
        }
      }
      emit_ids(cls, true);
      emit_ids(suffix_ids_, false);
      emit_ids({Tokenizer::kEot}, false);
      s.tokens = ad::vconcat(parts);
      in.learnable = std::move(s);
    }
    return in;
  }

  /// Causal transformer over one branch; end-of-sequence feature projected to D'.
  ad::Var encode_branch(ad::Tape& t, ad::Var tokens) const {
    const auto n = tokens.rows();
    if (n > geo_.context) throw std::invalid_argument("text sequence longer than context");
    ad::Var x = ad::add(tokens, ad::rows(t.param(*pos_), 0, n));
    for (const auto& b : blocks_) x = b(t, x, /*causal=*/true);
    return ad::matmul(ln_final_(t, ad::rows(x, n - 1, 1)), t.param(*proj_));
  }

  TextEmbedding encode_text(ad::Tape& t, const TextInputs& in) const {
    TextEmbedding e;
    e.handcrafted = encode_branch(t, in.handcrafted.tokens);
    if (in.learnable) {
      e.learnable = encode_branch(t, in.learnable->tokens);
      e.combined = ad::l2_normalize_rows(ad::scale(ad::add(*e.learnable, e.handcrafted), 0.5));
    } else {
      e.combined = ad::l2_normalize_rows(e.handcrafted);
    }
    return e;
  }

  TextEmbedding encode_category(ad::Tape& t, int category, std::optional<ad::Var> sigma) const {
    return encode_text(t, build_text_inputs(t, category, sigma));
  }

 private:
  TextGeometry geo_;
  std::vector<std::string> categories_;
  Tokenizer tokenizer_;
  ad::Param* token_embedding_ = nullptr;
  ad::Param* pos_ = nullptr;
  ad::Param* learnable_ = nullptr;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_final_;
  ad::Param* proj_ = nullptr;
  std::vector<int> prefix_ids_;
  std::vector<int> suffix_ids_;
  std::vector<std::vector<int>> class_ids_;
};

}  // namespace eventbind
