#pragma once

// Hierarchical triple contrastive alignment: three in-batch contrastive
// terms plus a consistency term between the two text-prompt branches.

#include "eventbind/autodiff.hpp"
#include "eventbind/errors.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace eventbind::htca {

inline constexpr double kMinTemperature = 1e-3;
inline constexpr double kMaxTemperature = 100.0;
inline constexpr double kInitTemperature = 0.07;

struct LossWeights {
  double alpha = 1.0;  // event <-> image
  double beta = 1.0;   // event <-> text(event)
  double theta = 1.0;  // text(image) <-> text(event)
  double gamma = 1.0;  // learnable vs hand-crafted text branch

  static LossWeights image_absent() { return {0.0, 1.0, 0.0, 0.0}; }

  void validate() const {
    for (double w : {alpha, beta, theta, gamma}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
    }
  }
};

/// tau = clamp(exp(log_tau), 1e-3, 100); 1 x 1.
inline ad::Var temperature(ad::Tape& t, ad::Param& log_tau) {
  return ad::clamp(ad::exp(t.param(log_tau)), kMinTemperature, kMaxTemperature);
}

/// Contrastive loss from an N x N similarity matrix whose diagonal holds the
/// positive pairs: mean over rows n of -log softmax(S_n / tau)[n].
/// symmetric=true averages with the same quantity over columns.
inline ad::Var contrastive_from_similarities(ad::Var sims, ad::Var tau, bool symmetric = false) {
  if (sims.rows() != sims.cols()) throw std::invalid_argument("contrastive_loss: similarity matrix must be square");
  if (sims.rows() < 1) throw std::invalid_argument("contrastive_loss: empty batch");
  if (!(tau.scalar() > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  ad::Var logits = ad::scale_by(sims, ad::reciprocal(tau));
  auto one_way = [](ad::Var l) { return ad::mean(ad::sub(ad::logsumexp_rows(l), ad::diagonal(l))); };
  ad::Var forward = one_way(logits);
  if (!symmetric) return forward;
  return ad::scale(ad::add(forward, one_way(ad::transpose(logits))), 0.5);
}

/// Mean over anchors n of -log softmax_m(M1_n . M2_m / tau)[n]. Anchors are
/// rows of m1 only; symmetric=true averages with the reverse direction.
inline ad::Var contrastive_loss(ad::Var m1, ad::Var m2, ad::Var tau, bool symmetric = false) {
  if (m1.rows() != m2.rows() || m1.cols() != m2.cols()) throw std::invalid_argument("contrastive_loss: batch shape mismatch");
  return contrastive_from_similarities(ad::matmul_nt(m1, m2), tau, symmetric);
}

/// Mean squared elementwise difference.
inline ad::Var mse_consistency(ad::Var f_l, ad::Var f_h) {
  if (f_l.rows() != f_h.rows() || f_l.cols() != f_h.cols()) throw std::invalid_argument("mse_consistency: dimension mismatch");
  return ad::mean_square(ad::sub(f_l, f_h));
}

struct LossReport {
  std::optional<double> l_ie;
  std::optional<double> l_et;
  std::optional<double> l_tt;
  std::optional<double> l_mse;
  double total = 0.0;

  /// Active terms joined by '+', e.g. "ie+et".
  [[nodiscard]] std::string composition(const LossWeights& w) const {
    std::string s;
    auto add = [&](const char* name, const std::optional<double>& v, double weight) {
      if (!v || weight == 0.0) return;
      if (!s.empty()) s += '+';
      s += name;
    };
    add("ie", l_ie, w.alpha);
    add("et", l_et, w.beta);
    add("tt", l_tt, w.theta);
    add("mse", l_mse, w.gamma);
    return s.empty() ? "none" : s;
  }
};

/// Batched embeddings entering the objective, all N x D'.
struct HtcaInputs {
  ad::Var event;                       // f^e
  std::optional<ad::Var> image;        // f^i
  ad::Var text_event;                  // f^{t,e}
  // Optional N x N event-text similarities where row n scores every batch
  // text conditioned on event n's content prompt. Replaces
  // f^e . (f^{t,e})^T in the event-text term when present.
  std::optional<ad::Var> event_text_similarity;
  std::optional<ad::Var> text_image;   // f^{t,i}
  // (f_l, f_h) pre-normalization branch pairs, one per available modality.
  std::vector<std::pair<ad::Var, ad::Var>> branches;
};

struct LossResult {
  ad::Var total;
  LossReport report;
};

/// alpha*L(f^i,f^e) + beta*L(f^e,f^{t,e}) + theta*L(f^{t,i},f^{t,e}) + gamma*MSE.
/// image_absent evaluates only L(f^e, f^{t,e}).
inline LossResult total_loss(const HtcaInputs& in, const LossWeights& w, ad::Var tau, bool image_absent = false, bool symmetric = false) {
  w.validate();
  ad::Tape& t = *in.event.tape;
  LossResult r;
  // summed in the order ie, et, tt, mse
  std::optional<ad::Var> w_ie, w_et, w_tt, w_mse;

  ad::Var l_et = in.event_text_similarity ? contrastive_from_similarities(*in.event_text_similarity, tau, symmetric)
                                          : contrastive_loss(in.event, in.text_event, tau, symmetric);
  r.report.l_et = l_et.scalar();
  if (w.beta != 0.0) w_et = ad::scale(l_et, w.beta);

  if (!image_absent) {
    if ((w.alpha != 0.0 || w.theta != 0.0) && (!in.image || !in.text_image)) {
      throw std::invalid_argument("total_loss: image embeddings required unless image_absent is set");
    }
    if (in.image) {
      ad::Var l_ie = contrastive_loss(*in.image, in.event, tau, symmetric);
      r.report.l_ie = l_ie.scalar();
      if (w.alpha != 0.0) w_ie = ad::scale(l_ie, w.alpha);
    }
    if (in.text_image) {
      ad::Var l_tt = contrastive_loss(*in.text_image, in.text_event, tau, symmetric);
      r.report.l_tt = l_tt.scalar();
      if (w.theta != 0.0) w_tt = ad::scale(l_tt, w.theta);
    }
    if (!in.branches.empty()) {
      std::vector<ad::Var> terms;
      for (const auto& [fl, fh] : in.branches) terms.push_back(mse_consistency(fl, fh));
      ad::Var l_mse = terms.front();
      for (std::size_t i = 1; i < terms.size(); ++i) l_mse = ad::add(l_mse, terms[i]);
      l_mse = ad::scale(l_mse, 1.0 / static_cast<double>(terms.size()));
      r.report.l_mse = l_mse.scalar();
      if (w.gamma != 0.0) w_mse = ad::scale(l_mse, w.gamma);
    }
  }

  std::vector<ad::Var> weighted;
  for (const auto& term : {w_ie, w_et, w_tt, w_mse}) {
    if (term) weighted.push_back(*term);
  }
  if (weighted.empty()) {
    r.total = t.constant(ad::Mat::Zero(1, 1));
  } else {
    r.total = weighted.front();
    for (std::size_t i = 1; i < weighted.size(); ++i) r.total = ad::add(r.total, weighted[i]);
  }
  r.report.total = r.total.scalar();
  return r;
}

}  // namespace eventbind::htca
