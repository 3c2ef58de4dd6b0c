#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "daclab/optim.hpp"
#include "daclab/tensor.hpp"

namespace daclab {

// Trainable linear maps from student activations onto each teacher's
// activations, one square pair per tap, identity at creation.
template <class T>
struct ProjectionPair {
  Tensor<T> w_sc;
  Tensor<T> w_cl;

  static ProjectionPair identity(std::size_t dim, bool requires_grad = true) {
    return {Tensor<T>::identity(dim, requires_grad), Tensor<T>::identity(dim, requires_grad)};
  }
};

template <class T>
using ProjectionSet = std::map<std::string, ProjectionPair<T>>;

template <class T>
ProjectionSet<T> make_projections(const std::vector<std::pair<std::string, std::size_t>>& taps,
                                  bool requires_grad = true) {
  ProjectionSet<T> out;
  for (const auto& [name, dim] : taps)
    out.emplace(name, ProjectionPair<T>::identity(dim, requires_grad));
  return out;
}

struct ConsolidationConfig {
  double lambda = 0.01;       // latent vs output distillation ratio
  double temperature = 0.5;
  bool t_squared_scaling = true;
  std::vector<std::string> tap_layers;  // empty -> arch default (penultimate + logits)
  std::size_t iterations = 5000;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;  // Adam lr 1e-4 by default
  enum class StudentInit { prev_cl, sc, random };
  StudentInit student_init = StudentInit::prev_cl;

  void validate() const {
    if (lambda < 0) throw std::invalid_argument("consolidation: lambda must be >= 0");
    if (temperature <= 0) throw std::invalid_argument("consolidation: temperature must be > 0");
    if (iterations < 1) throw std::invalid_argument("consolidation: iterations must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("consolidation: batch size must be >= 1");
  }
};

// Temperature knowledge distillation. Mean over the batch of
// KL(softmax(teacher/T) || softmax(student/T)), scaled by T^2 by default so
// gradient magnitude stays temperature-independent.
template <class T>
Tensor<T> kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, double temperature,
                  bool t_squared_scaling = true) {
  if (student_logits.shape() != teacher_logits.shape())
    throw std::invalid_argument("kd_loss: shape mismatch " + shape_str(student_logits.shape()) +
                                " vs " + shape_str(teacher_logits.shape()));
  if (student_logits.shape().size() != 2)
    throw std::invalid_argument("kd_loss: expected (batch, classes) logits, got " +
                                shape_str(student_logits.shape()));
  if (temperature <= 0) throw std::invalid_argument("kd_loss: temperature must be > 0");
  std::size_t batch = student_logits.shape()[0];

  T inv_t = T(1) / T(temperature);
  auto logp_s = log_softmax(scalar_mul(student_logits, inv_t));
  auto logp_t = log_softmax(scalar_mul(teacher_logits, inv_t));
  auto p_t = exp(logp_t);
  // sum_b sum_c p_t * (logp_t - logp_s) / batch
  auto kl = sum(mul(p_t, sub(logp_t, logp_s)));
  T scale = T(1) / T(batch);
  if (t_squared_scaling) scale *= T(temperature) * T(temperature);
  return scalar_mul(kl, scale);
}

// Double knowledge distillation: the new head matches the SC teacher and
// every previous head matches the previous consolidated model, one KD term
// per task. student_outs covers heads 1..i in order; prev_cl_outs covers
// 1..i-1 and is empty at the first consolidation.
template <class T>
Tensor<T> dkd_loss(const std::vector<Tensor<T>>& student_outs, const Tensor<T>& sc_out,
                   const std::vector<Tensor<T>>& prev_cl_outs, double temperature,
                   bool t_squared_scaling = true) {
  if (student_outs.size() != prev_cl_outs.size() + 1)
    throw std::invalid_argument("dkd_loss: " + std::to_string(student_outs.size()) +
                                " student heads vs " + std::to_string(prev_cl_outs.size()) +
                                " previous-teacher outputs");
  Tensor<T> total =
      kd_loss(student_outs.back(), sc_out, temperature, t_squared_scaling);
  for (std::size_t k = 0; k < prev_cl_outs.size(); ++k) {
    total = add(total,
                kd_loss(student_outs[k], prev_cl_outs[k], temperature, t_squared_scaling));
  }
  return total;
}

namespace detail {

// Mean over batch of the squared L2 distance || h W^T - target ||^2.
template <class T>
Tensor<T> projected_match(const Tensor<T>& h_student, const Tensor<T>& h_teacher,
                          const Tensor<T>& w, const std::string& tap) {
  if (h_student.shape().size() != 2 || h_teacher.shape().size() != 2)
    throw std::invalid_argument("pld_loss: activations at '" + tap + "' must be (batch, feat)");
  if (w.shape().size() != 2 || w.shape()[0] != w.shape()[1] || w.shape()[1] != h_student.shape()[1])
    throw std::invalid_argument("pld_loss: projection " + shape_str(w.shape()) +
                                " does not match tap '" + tap + "' activations " +
                                shape_str(h_student.shape()));
  if (h_student.shape() != h_teacher.shape())
    throw std::invalid_argument("pld_loss: student/teacher width mismatch at '" + tap + "': " +
                                shape_str(h_student.shape()) + " vs " +
                                shape_str(h_teacher.shape()));
  std::size_t batch = h_student.shape()[0];
  auto diff = sub(linear(h_student, w), h_teacher);
  return scalar_mul(sum(square(diff)), T(1) / T(batch));
}

}  // namespace detail

// Projected Latent Distillation over a set of taps. The student activation is
// linearly projected onto each teacher's activation; the previous-model term
// carries weight (i-1) so every consolidated task weighs the same as the new
// one. Gradients flow into the student activations and both projections.
template <class T>
Tensor<T> pld_loss(const std::map<std::string, Tensor<T>>& h_student,
                   const std::map<std::string, Tensor<T>>& h_sc,
                   const std::map<std::string, Tensor<T>>& h_cl, ProjectionSet<T>& projections,
                   int task_index) {
  if (task_index < 1) throw std::invalid_argument("pld_loss: task index must be >= 1");
  auto same_taps = [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return false;
    auto it = b.begin();
    for (const auto& [k, v] : a) {
      if (it->first != k) return false;
      ++it;
    }
    return true;
  };
  if (!same_taps(h_student, h_sc) || (task_index > 1 && !same_taps(h_student, h_cl)))
    throw std::invalid_argument("pld_loss: tap sets differ between activation maps");
  if (h_student.empty()) throw std::invalid_argument("pld_loss: no taps given");

  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (const auto& [tap, hs] : h_student) {
    auto pit = projections.find(tap);
    if (pit == projections.end())
      throw std::invalid_argument("pld_loss: no projection pair for tap '" + tap + "'");
    total = add(total, detail::projected_match(hs, h_sc.at(tap), pit->second.w_sc, tap));
    if (task_index > 1) {
      auto cl_term = detail::projected_match(hs, h_cl.at(tap), pit->second.w_cl, tap);
      total = add(total, scalar_mul(cl_term, T(task_index - 1)));
    }
  }
  return total;
}

// L = L_DKD + lambda * L_PLD, with lambda applied exactly once. lambda = 0
// returns the DKD term itself.
template <class T>
Tensor<T> total_loss(const Tensor<T>& dkd, const Tensor<T>& pld, double lambda) {
  if (lambda < 0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  if (lambda == 0) return dkd;
  return add(dkd, scalar_mul(pld, T(lambda)));
}

}  // namespace daclab
