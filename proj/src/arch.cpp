#include "daclab/arch.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "daclab/util.hpp"

namespace daclab {

void validate_arch(const ArchSpec& spec) {
  if (spec.in_c <= 0 || spec.in_h <= 0 || spec.in_w <= 0)
    throw std::invalid_argument("arch: input dimensions must be positive");
  if (spec.head_width < 1) throw std::invalid_argument("arch: head width must be >= 1");
  if (spec.hidden.empty()) throw std::invalid_argument("arch: hidden plan must be non-empty");
  for (int h : spec.hidden)
    if (h <= 0) throw std::invalid_argument("arch: hidden widths must be positive");
  if (spec.kind == ArchSpec::Kind::smallcnn) {
    if (spec.hidden.size() != 3)
      throw std::invalid_argument("arch: smallcnn needs hidden = {c1, c2, dense}");
    if (spec.in_h % 4 != 0 || spec.in_w % 4 != 0)
      throw std::invalid_argument("arch: smallcnn input sides must be divisible by 4");
  }
  auto known = backbone_tap_names(spec);
  known.push_back("logits");
  for (const auto& t : spec.taps) {
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw std::invalid_argument("arch: tap '" + t + "' does not name a layer");
  }
}

std::vector<std::string> backbone_tap_names(const ArchSpec& spec) {
  std::vector<std::string> names;
  if (spec.kind == ArchSpec::Kind::mlp) {
    for (std::size_t i = 0; i < spec.hidden.size(); ++i)
      names.push_back("fc" + std::to_string(i + 1));
  } else {
    names = {"conv1", "conv2", "fc1"};
  }
  return names;
}

std::string penultimate_tap(const ArchSpec& spec) {
  if (spec.kind == ArchSpec::Kind::mlp) return "fc" + std::to_string(spec.hidden.size());
  return "fc1";
}

std::vector<std::string> default_taps(const ArchSpec& spec) {
  return {penultimate_tap(spec), "logits"};
}

std::vector<std::string> effective_taps(const ArchSpec& spec) {
  auto taps = spec.taps.empty() ? default_taps(spec) : spec.taps;
  auto known = backbone_tap_names(spec);
  known.push_back("logits");
  for (const auto& t : taps)
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw std::invalid_argument("arch: tap '" + t + "' does not name a layer");
  return taps;
}

std::size_t tap_feature_width(const ArchSpec& spec, const std::string& tap) {
  if (tap == "logits") return std::size_t(spec.head_width);
  if (spec.kind == ArchSpec::Kind::mlp) {
    for (std::size_t i = 0; i < spec.hidden.size(); ++i)
      if (tap == "fc" + std::to_string(i + 1)) return std::size_t(spec.hidden[i]);
  } else {
    std::size_t h2 = std::size_t(spec.in_h) / 2, w2 = std::size_t(spec.in_w) / 2;
    if (tap == "conv1") return std::size_t(spec.hidden[0]) * h2 * w2;
    if (tap == "conv2") return std::size_t(spec.hidden[1]) * (h2 / 2) * (w2 / 2);
    if (tap == "fc1") return std::size_t(spec.hidden[2]);
  }
  throw std::invalid_argument("arch: tap '" + tap + "' does not name a layer");
}

std::string arch_canonical_string(const ArchSpec& spec) {
  std::string s = spec.kind == ArchSpec::Kind::mlp ? "mlp" : "smallcnn";
  s += "|in=" + std::to_string(spec.in_c) + "x" + std::to_string(spec.in_h) + "x" +
       std::to_string(spec.in_w);
  s += "|hidden=";
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(spec.hidden[i]);
  }
  s += "|head=" + std::to_string(spec.head_width);
  s += "|taps=";
  auto taps = spec.taps.empty() ? default_taps(spec) : spec.taps;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (i) s += ",";
    s += taps[i];
  }
  return s;
}

std::uint64_t arch_hash(const ArchSpec& spec) { return fnv1a64(arch_canonical_string(spec)); }

std::string arch_hash_hex(const ArchSpec& spec) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(arch_hash(spec)));
  return std::string(buf);
}

bool arch_equal(const ArchSpec& a, const ArchSpec& b) {
  return arch_canonical_string(a) == arch_canonical_string(b);
}

}  // namespace daclab
