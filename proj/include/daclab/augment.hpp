#pragma once

#include <memory>
#include <string>
#include <vector>

#include "daclab/data.hpp"
#include "daclab/image.hpp"
#include "daclab/rng.hpp"
#include "daclab/tensor.hpp"

namespace daclab {

// Heavy stochastic augmentation settings for the consolidation data supply.
// Pipeline order: crop -> resize -> flip -> rotation -> color jitter -> CutMix.
struct AugConfig {
  int out_h = 16;
  int out_w = 16;
  double crop_scale_min = 0.08;
  double crop_scale_max = 1.0;
  double rotation_deg = 30.0;
  double flip_p = 0.5;
  double jitter = 0.4;  // brightness/contrast/saturation strength
  bool cutmix = true;
  double cutmix_beta = 1.0;

  void validate() const;
};

// Consolidation data supply: a single image, a folder of images, static
// noise, or (rehearsal-free mode) a task's own training data.
struct OODSource {
  enum class Kind { single_image, image_folder, noise, real_data };

  Kind kind = Kind::noise;
  std::string path;  // single_image / image_folder
  std::shared_ptr<const Experience> experience;  // real_data

  static OODSource SingleImage(std::string p) {
    return {Kind::single_image, std::move(p), nullptr};
  }
  static OODSource ImageFolder(std::string p) {
    return {Kind::image_folder, std::move(p), nullptr};
  }
  static OODSource Noise() { return {Kind::noise, {}, nullptr}; }
  static OODSource RealData(std::shared_ptr<const Experience> exp) {
    return {Kind::real_data, {}, std::move(exp)};
  }
};

std::string source_kind_name(OODSource::Kind kind);

// Rectangular CutMix paste of x2 into x1 with a given mix coefficient m:
// the pasted area fraction is 1-m up to pixel quantization
// (box side = round(sqrt(1-m) * dim)), placed uniformly inside the image.
Image cutmix_with_m(const Image& x1, const Image& x2, double m, RandomStream& rng);

// m ~ Beta(beta, beta).
Image cutmix(const Image& x1, const Image& x2, RandomStream& rng, double beta);

// Draws augmented consolidation batches. Item n is a pure function of
// (stream key, n), so batch size and worker count never change a sample.
class OODSampler {
 public:
  OODSampler(OODSource source, AugConfig aug, RandomStream stream);

  Image item(std::uint64_t index) const;

  // Next `batch` items as a (B,C,H,W) tensor; advances the item counter.
  Tensor<float> next_batch(std::size_t batch);

  std::uint64_t position() const { return next_index_; }
  const AugConfig& aug() const { return aug_; }

  // Precomputed-patch cache, stored in the tensor-blob container format.
  void save_cache(const std::string& path, std::size_t count) const;

 private:
  Image base_image(RandomStream& rng) const;
  Image augment_one(RandomStream rng, bool allow_cutmix) const;

  OODSource source_;
  AugConfig aug_;
  RandomStream stream_;
  std::uint64_t next_index_ = 0;
  std::vector<Image> folder_images_;
  Image single_;
};

// One-shot batch at a given starting item index.
Tensor<float> sample_ood_batch(const OODSource& source, const AugConfig& aug, std::size_t batch,
                               RandomStream stream, std::uint64_t start_index = 0);

// Replays a saved patch cache in order, cycling.
class PatchCacheSampler {
 public:
  explicit PatchCacheSampler(const std::string& path);
  Tensor<float> next_batch(std::size_t batch);
  std::size_t patch_count() const { return count_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }

 private:
  std::vector<float> patches_;  // (N,C,H,W) flattened
  std::size_t count_ = 0;
  int c_ = 0, h_ = 0, w_ = 0;
  std::size_t pos_ = 0;
};

}  // namespace daclab
