#include "daclab/augment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "daclab/serialize.hpp"

namespace daclab {

void AugConfig::validate() const {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("aug: output size must be positive");
  if (crop_scale_min <= 0 || crop_scale_min > crop_scale_max || crop_scale_max > 1.0)
    throw std::invalid_argument("aug: crop scale range must satisfy 0 < min <= max <= 1");
  if (flip_p < 0 || flip_p > 1) throw std::invalid_argument("aug: flip probability in [0,1]");
  if (rotation_deg < 0) throw std::invalid_argument("aug: rotation range must be >= 0");
  if (jitter < 0) throw std::invalid_argument("aug: jitter strength must be >= 0");
  if (cutmix && cutmix_beta <= 0) throw std::invalid_argument("aug: cutmix beta must be > 0");
}

std::string source_kind_name(OODSource::Kind kind) {
  switch (kind) {
    case OODSource::Kind::single_image: return "single_image";
    case OODSource::Kind::image_folder: return "image_folder";
    case OODSource::Kind::noise: return "noise";
    case OODSource::Kind::real_data: return "real_data";
  }
  return "?";
}

Image cutmix_with_m(const Image& x1, const Image& x2, double m, RandomStream& rng) {
  if (x1.c != x2.c || x1.h != x2.h || x1.w != x2.w)
    throw std::invalid_argument("cutmix: shape mismatch " + std::to_string(x1.h) + "x" +
                                std::to_string(x1.w) + " vs " + std::to_string(x2.h) + "x" +
                                std::to_string(x2.w));
  m = std::clamp(m, 0.0, 1.0);
  int bh = int(std::lround(std::sqrt(1.0 - m) * x1.h));
  int bw = int(std::lround(std::sqrt(1.0 - m) * x1.w));
  Image out = x1;
  if (bh == 0 || bw == 0) return out;  // degenerate box, x1 unchanged
  int y0 = int(rng.uniform_int(std::uint64_t(x1.h - bh + 1)));
  int x0 = int(rng.uniform_int(std::uint64_t(x1.w - bw + 1)));
  for (int c = 0; c < x1.c; ++c)
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x) out.at(c, y0 + y, x0 + x) = x2.at(c, y0 + y, x0 + x);
  return out;
}

Image cutmix(const Image& x1, const Image& x2, RandomStream& rng, double beta) {
  double m = rng.beta_symmetric(beta);
  return cutmix_with_m(x1, x2, m, rng);
}

OODSampler::OODSampler(OODSource source, AugConfig aug, RandomStream stream)
    : source_(std::move(source)), aug_(aug), stream_(stream) {
  aug_.validate();
  switch (source_.kind) {
    case OODSource::Kind::single_image:
      single_ = read_image(source_.path);
      break;
    case OODSource::Kind::image_folder: {
      std::vector<std::string> files;
      std::error_code ec;
      for (const auto& entry : std::filesystem::directory_iterator(source_.path, ec)) {
        auto ext = entry.path().extension().string();
        if (ext == ".ppm" || ext == ".png") files.push_back(entry.path().string());
      }
      if (ec) throw std::runtime_error("image folder: cannot read " + source_.path);
      std::sort(files.begin(), files.end());
      if (files.empty())
        throw std::runtime_error("image folder: no .ppm/.png images in " + source_.path);
      for (const auto& f : files) folder_images_.push_back(read_image(f));
      break;
    }
    case OODSource::Kind::noise:
      break;
    case OODSource::Kind::real_data:
      if (!source_.experience || source_.experience->train.size() == 0)
        throw std::invalid_argument("real_data source: empty experience");
      break;
  }
}

Image OODSampler::base_image(RandomStream& rng) const {
  switch (source_.kind) {
    case OODSource::Kind::single_image:
      return single_;
    case OODSource::Kind::image_folder:
      return folder_images_[rng.uniform_int(folder_images_.size())];
    case OODSource::Kind::real_data: {
      const auto& train = source_.experience->train;
      const auto& flat = train.x[rng.uniform_int(train.size())];
      // stored samples may be single channel; replicate to 3 for the pipeline
      int hw = aug_.out_h * aug_.out_w;
      if (int(flat.size()) == 3 * hw || flat.size() % 3 == 0) {
        int side = int(std::lround(std::sqrt(double(flat.size()) / 3.0)));
        if (std::size_t(3) * side * side == flat.size()) {
          Image img = Image::make(3, side, side);
          img.data = flat;
          return img;
        }
      }
      int side = int(std::lround(std::sqrt(double(flat.size()))));
      if (std::size_t(side) * side != flat.size())
        throw std::invalid_argument("real_data source: non-square sample");
      Image img = Image::make(3, side, side);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = flat[std::size_t(y) * side + x];
      return img;
    }
    case OODSource::Kind::noise:
    default:
      throw std::logic_error("base_image called for noise source");
  }
}

Image OODSampler::augment_one(RandomStream rng, bool allow_cutmix) const {
  // Noise items are i.i.d. uniform pixels at the output size; geometric and
  // color transforms of white noise are white noise again, so only CutMix
  // applies (and is itself a no-op distributionally).
  if (source_.kind == OODSource::Kind::noise) {
    Image out = Image::make(3, aug_.out_h, aug_.out_w);
    for (auto& v : out.data) v = float(rng.uniform());
    return out;
  }

  Image img = base_image(rng);

  // random area crop
  double a = rng.uniform(aug_.crop_scale_min, aug_.crop_scale_max);
  int ch = std::max(1, int(std::lround(img.h * std::sqrt(a))));
  int cw = std::max(1, int(std::lround(img.w * std::sqrt(a))));
  ch = std::min(ch, img.h);
  cw = std::min(cw, img.w);
  int y0 = int(rng.uniform_int(std::uint64_t(img.h - ch + 1)));
  int x0 = int(rng.uniform_int(std::uint64_t(img.w - cw + 1)));
  img = crop(img, y0, x0, ch, cw);

  img = resize_bilinear(img, aug_.out_h, aug_.out_w);

  if (rng.uniform() < aug_.flip_p) img = hflip(img);

  if (aug_.rotation_deg > 0) {
    double angle = rng.uniform(-aug_.rotation_deg, aug_.rotation_deg);
    img = rotate_bilinear(img, angle);
  }

  if (aug_.jitter > 0) {
    double brightness = 1.0 + rng.uniform(-aug_.jitter, aug_.jitter);
    double contrast = 1.0 + rng.uniform(-aug_.jitter, aug_.jitter);
    double saturation = 1.0 + rng.uniform(-aug_.jitter, aug_.jitter);
    double mean_all = 0;
    for (float v : img.data) mean_all += v;
    mean_all /= double(img.data.size());

    std::size_t hw = std::size_t(img.h) * img.w;
    for (std::size_t p = 0; p < hw; ++p) {
      float gray = 0;
      for (int c = 0; c < img.c; ++c) gray += img.data[std::size_t(c) * hw + p];
      gray /= float(img.c);
      for (int c = 0; c < img.c; ++c) {
        double v = img.data[std::size_t(c) * hw + p];
        v *= brightness;
        v = (v - mean_all * brightness) * contrast + mean_all * brightness;
        double g = gray * brightness;
        v = g + (v - g) * saturation;
        img.data[std::size_t(c) * hw + p] = float(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  if (allow_cutmix && aug_.cutmix) {
    Image partner = augment_one(rng.derive("cutmix_partner"), false);
    img = cutmix(img, partner, rng, aug_.cutmix_beta);
  }
  return img;
}

Image OODSampler::item(std::uint64_t index) const {
  return augment_one(stream_.derive(index), true);
}

Tensor<float> OODSampler::next_batch(std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("ood batch: batch size must be >= 1");
  std::vector<float> data;
  data.reserve(batch * std::size_t(3) * aug_.out_h * aug_.out_w);
  for (std::size_t i = 0; i < batch; ++i) {
    Image img = item(next_index_++);
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  return Tensor<float>::from_values(
      {batch, 3, std::size_t(aug_.out_h), std::size_t(aug_.out_w)}, std::move(data));
}

void OODSampler::save_cache(const std::string& path, std::size_t count) const {
  if (count == 0) throw std::invalid_argument("patch cache: count must be >= 1");
  std::vector<float> data;
  data.reserve(count * std::size_t(3) * aug_.out_h * aug_.out_w);
  for (std::size_t i = 0; i < count; ++i) {
    Image img = item(i);
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  auto patches = Tensor<float>::from_values(
      {count, 3, std::size_t(aug_.out_h), std::size_t(aug_.out_w)}, std::move(data));
  write_file_bytes(path, serialize_tensor_blob({{"patches", patches}}));
}

Tensor<float> sample_ood_batch(const OODSource& source, const AugConfig& aug, std::size_t batch,
                               RandomStream stream, std::uint64_t start_index) {
  OODSampler sampler(source, aug, stream);
  std::vector<float> data;
  data.reserve(batch * std::size_t(3) * aug.out_h * aug.out_w);
  for (std::size_t i = 0; i < batch; ++i) {
    Image img = sampler.item(start_index + i);
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  return Tensor<float>::from_values({batch, 3, std::size_t(aug.out_h), std::size_t(aug.out_w)},
                                    std::move(data));
}

PatchCacheSampler::PatchCacheSampler(const std::string& path) {
  auto tensors = deserialize_tensor_blob(read_file_bytes(path));
  if (tensors.size() != 1 || tensors[0].first != "patches")
    throw std::runtime_error("patch cache: expected a single 'patches' tensor in " + path);
  const auto& t = tensors[0].second;
  if (t.shape().size() != 4) throw std::runtime_error("patch cache: expected (N,C,H,W) patches");
  count_ = t.shape()[0];
  c_ = int(t.shape()[1]);
  h_ = int(t.shape()[2]);
  w_ = int(t.shape()[3]);
  patches_ = t.values();
}

Tensor<float> PatchCacheSampler::next_batch(std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("patch cache: batch size must be >= 1");
  std::size_t item = std::size_t(c_) * h_ * w_;
  std::vector<float> data;
  data.reserve(batch * item);
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t idx = (pos_ + i) % count_;
    data.insert(data.end(), patches_.begin() + idx * item, patches_.begin() + (idx + 1) * item);
  }
  pos_ = (pos_ + batch) % count_;
  return Tensor<float>::from_values(
      {batch, std::size_t(c_), std::size_t(h_), std::size_t(w_)}, std::move(data));
}

}  // namespace daclab
