#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace daclab {

// Desk-scale backbone families. "mlp" is flatten -> N dense+relu layers;
// "smallcnn" is conv-pool-conv-pool-dense with hidden = {c1, c2, dense}.
struct ArchSpec {
  enum class Kind { mlp, smallcnn };

  Kind kind = Kind::mlp;
  int in_c = 3;
  int in_h = 16;
  int in_w = 16;
  std::vector<int> hidden = {64, 32};
  std::vector<std::string> taps;  // empty -> default(penultimate, logits)
  int head_width = 2;

  int input_dim() const { return in_c * in_h * in_w; }
};

// Throws std::invalid_argument on malformed specs (unknown taps, bad dims).
void validate_arch(const ArchSpec& spec);

// Activation points addressable as taps, excluding "logits".
std::vector<std::string> backbone_tap_names(const ArchSpec& spec);

std::string penultimate_tap(const ArchSpec& spec);

// Taps to record by default: penultimate representation plus logits.
std::vector<std::string> default_taps(const ArchSpec& spec);

// Effective tap list (spec.taps, or the default when empty), validated.
std::vector<std::string> effective_taps(const ArchSpec& spec);

// Flattened feature width of a tap ("logits" -> head_width).
std::size_t tap_feature_width(const ArchSpec& spec, const std::string& tap);

std::string arch_canonical_string(const ArchSpec& spec);
std::uint64_t arch_hash(const ArchSpec& spec);
std::string arch_hash_hex(const ArchSpec& spec);

bool arch_equal(const ArchSpec& a, const ArchSpec& b);

}  // namespace daclab
