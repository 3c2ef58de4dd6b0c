#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "daclab/losses.hpp"
#include "daclab/model.hpp"

namespace daclab {

// Mean over batch of || h W^T - target ||^2, the per-pair PLD building block.
template <class T>
Tensor<T> projected_match_loss(const Tensor<T>& h_student, const Tensor<T>& h_teacher,
                               const Tensor<T>& w, const std::string& tap = "?") {
  return detail::projected_match(h_student, h_teacher, w, tap);
}

template <class T>
struct ConsolidationBatchLoss {
  Tensor<T> dkd;
  Tensor<T> pld;
  Tensor<T> total;
};

// Identity projection pairs for the configured taps. Backbone taps use
// single-vector matching; the logits tap shares one head-width pair across
// head-matched comparisons (heads are uniform width by construction).
template <class T>
ProjectionSet<T> consolidation_projections(const ArchSpec& arch,
                                           const std::vector<std::string>& taps,
                                           bool requires_grad) {
  std::vector<std::pair<std::string, std::size_t>> sized;
  for (const auto& tap : taps) sized.emplace_back(tap, tap_feature_width(arch, tap));
  return make_projections<T>(sized, requires_grad);
}

// The DAC objective on one batch: double output distillation over all heads
// plus projected latent distillation at the configured taps. The student's
// heads 1..i-1 target the previous consolidated model, head i targets the SC
// teacher. At the logits tap each head pairs with its own teacher output, one
// term per task, which carries the same per-task weight as the (i-1)-scaled
// single-vector form used at backbone taps.
template <class T>
ConsolidationBatchLoss<T> consolidation_batch_loss(const Model<T>& student,
                                                   const Model<T>& sc_teacher,
                                                   const Model<T>& prev_teacher,
                                                   const Tensor<T>& batch,
                                                   const ConsolidationConfig& cfg,
                                                   ProjectionSet<T>& projections) {
  if (sc_teacher.heads.size() != 1)
    throw std::invalid_argument("consolidation: sc teacher must have exactly one head");
  const int i = int(prev_teacher.heads.size()) + 1;
  if (int(student.heads.size()) != i)
    throw std::invalid_argument("consolidation: student has " +
                                std::to_string(student.heads.size()) + " heads, expected " +
                                std::to_string(i));

  std::vector<std::string> taps =
      cfg.tap_layers.empty() ? effective_taps(student.arch) : cfg.tap_layers;
  std::vector<std::string> backbone_taps;
  bool logits_tap = false;
  for (const auto& t : taps) {
    if (t == "logits") {
      logits_tap = true;
    } else {
      backbone_taps.push_back(t);
    }
  }

  auto s_out = forward(student, batch, HeadSelect::All(), backbone_taps);
  auto sc_out = forward(sc_teacher, batch, HeadSelect::All(), backbone_taps);
  auto prev_out = forward(prev_teacher, batch, HeadSelect::All(), backbone_taps);

  std::vector<Tensor<T>> student_logits;
  for (const auto& [id, t] : s_out.logits) student_logits.push_back(t);
  std::vector<Tensor<T>> prev_logits;
  for (const auto& [id, t] : prev_out.logits) prev_logits.push_back(t);
  const Tensor<T>& sc_logits = sc_out.logits[0].second;

  auto dkd =
      dkd_loss(student_logits, sc_logits, prev_logits, cfg.temperature, cfg.t_squared_scaling);

  Tensor<T> pld = Tensor<T>::scalar(T(0));
  if (!backbone_taps.empty())
    pld = pld_loss(s_out.taps, sc_out.taps, prev_out.taps, projections, i);
  if (logits_tap) {
    auto pit = projections.find("logits");
    if (pit == projections.end())
      throw std::invalid_argument("consolidation: no projection pair for the logits tap");
    pld = add(pld, projected_match_loss(student_logits.back(), sc_logits, pit->second.w_sc,
                                        "logits"));
    for (std::size_t k = 0; k + 1 < student_logits.size(); ++k)
      pld = add(pld, projected_match_loss(student_logits[k], prev_logits[k], pit->second.w_cl,
                                          "logits"));
  }

  return {dkd, pld, total_loss(dkd, pld, cfg.lambda)};
}

}  // namespace daclab
