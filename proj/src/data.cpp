#include "daclab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "daclab/rng.hpp"
#include "daclab/serialize.hpp"

namespace daclab {

namespace {

void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
  double r = 0, g = 0, b = 0;
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (int(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  rgb[0] = float(r);
  rgb[1] = float(g);
  rgb[2] = float(b);
}

enum class ShapeKind { square, circle, triangle, plus, ring, diamond };
constexpr int kShapeCount = 6;

bool inside_shape(ShapeKind kind, double u, double v) {
  // u, v in [-1, 1] shape-local coordinates
  switch (kind) {
    case ShapeKind::square: return std::fabs(u) <= 0.85 && std::fabs(v) <= 0.85;
    case ShapeKind::circle: return u * u + v * v <= 0.81;
    case ShapeKind::triangle: return v >= -0.8 && std::fabs(u) <= (0.9 - v) * 0.55;
    case ShapeKind::plus: return std::fabs(u) <= 0.28 || std::fabs(v) <= 0.28;
    case ShapeKind::ring: {
      double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.5;
    }
    case ShapeKind::diamond: return std::fabs(u) + std::fabs(v) <= 1.0;
  }
  return false;
}

double texture_factor(int texture, double u, double v) {
  switch (texture) {
    case 1: return std::fmod(std::floor((v + 1.0) * 3.0), 2.0) == 0.0 ? 1.0 : 0.45;  // stripes
    case 2: {  // checker
      double cu = std::floor((u + 1.0) * 2.5), cv = std::floor((v + 1.0) * 2.5);
      return std::fmod(cu + cv, 2.0) == 0.0 ? 1.0 : 0.45;
    }
    default: return 1.0;  // solid
  }
}

}  // namespace

Dataset shapes_dataset(std::uint64_t seed, int n_classes, int samples_per_class,
                       int image_size) {
  if (n_classes < 2) throw std::invalid_argument("shapes: need at least 2 classes");
  if (samples_per_class < 4) throw std::invalid_argument("shapes: need >= 4 samples per class");
  if (image_size < 8) throw std::invalid_argument("shapes: image size too small");

  Dataset ds;
  ds.image_c = 3;
  ds.image_h = image_size;
  ds.image_w = image_size;
  ds.n_classes = n_classes;

  const int S = image_size;
  // classes enumerate (shape, color, texture) combos over a small shared
  // palette; shapes recur across colors so tasks compete for the same
  // features and naive finetuning interferes
  const int kShapes = 5;
  const int kPalette = 2;
  for (int cls = 0; cls < n_classes; ++cls) {
    ShapeKind shape = ShapeKind(cls % kShapes);
    int color_idx = (cls / kShapes) % kPalette;
    int texture = (cls / (kShapes * kPalette)) % 3;
    float color[3];
    hsv_to_rgb(double(color_idx) / kPalette, 0.95, 1.0, color);

    RandomStream rng(seed, "shapes/class" + std::to_string(cls));
    for (int s = 0; s < samples_per_class; ++s) {
      std::vector<float> img(std::size_t(3) * S * S);
      // background clutter
      for (auto& v : img) v = float(rng.uniform(0.0, 0.30));

      double cy = S / 2.0 + rng.uniform(-0.10, 0.10) * S;
      double cx = S / 2.0 + rng.uniform(-0.10, 0.10) * S;
      double half = rng.uniform(0.30, 0.42) * S;
      double angle = rng.uniform(-0.35, 0.35);  // radians
      double brightness = rng.uniform(0.55, 1.0);
      double cs = std::cos(angle), sn = std::sin(angle);

      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          double dy = (y - cy) / half, dx = (x - cx) / half;
          double u = cs * dx - sn * dy;
          double v = sn * dx + cs * dy;
          if (u < -1 || u > 1 || v < -1 || v > 1) continue;
          if (!inside_shape(shape, u, v)) continue;
          double tex = texture_factor(texture, u, v);
          for (int c = 0; c < 3; ++c)
            img[(std::size_t(c) * S + y) * S + x] = float(color[c] * brightness * tex);
        }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(cls);

      std::size_t idx = ds.images.size() - 1;
      // fixed 3:1 per-class train/test split
      if (s % 4 == 3) {
        ds.test_indices.push_back(idx);
      } else {
        ds.train_indices.push_back(idx);
      }
    }
  }
  return ds;
}

std::vector<Experience> make_split_stream(const Dataset& dataset, int n_tasks,
                                          int classes_per_task, std::uint64_t seed) {
  if (n_tasks < 1 || classes_per_task < 1)
    throw std::invalid_argument("split stream: tasks and classes per task must be >= 1");
  if (std::size_t(n_tasks) * classes_per_task > std::size_t(dataset.n_classes))
    throw std::invalid_argument("split stream: " + std::to_string(n_tasks) + " tasks x " +
                                std::to_string(classes_per_task) + " classes need more than the " +
                                std::to_string(dataset.n_classes) + " available classes");

  std::vector<int> perm(dataset.n_classes);
  std::iota(perm.begin(), perm.end(), 0);
  RandomStream rng(seed, "split_stream");
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_int(i)]);

  std::vector<Experience> stream;
  for (int t = 0; t < n_tasks; ++t) {
    Experience exp;
    exp.task_id = t + 1;
    for (int k = 0; k < classes_per_task; ++k)
      exp.classes.push_back(perm[std::size_t(t) * classes_per_task + k]);
    std::sort(exp.classes.begin(), exp.classes.end());

    auto in_task = [&](int label) {
      return std::binary_search(exp.classes.begin(), exp.classes.end(), label);
    };
    for (std::size_t idx : dataset.train_indices)
      if (in_task(dataset.labels[idx])) {
        exp.train.x.push_back(dataset.images[idx]);
        exp.train.y.push_back(dataset.labels[idx]);
      }
    for (std::size_t idx : dataset.test_indices)
      if (in_task(dataset.labels[idx])) {
        exp.test.x.push_back(dataset.images[idx]);
        exp.test.y.push_back(dataset.labels[idx]);
      }
    stream.push_back(std::move(exp));
  }
  return stream;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t pos,
                        const std::string& path) {
  if (pos + 4 > bytes.size()) throw std::runtime_error("idx: truncated file: " + path);
  return (std::uint32_t(bytes[pos]) << 24) | (std::uint32_t(bytes[pos + 1]) << 16) |
         (std::uint32_t(bytes[pos + 2]) << 8) | std::uint32_t(bytes[pos + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto ibytes = read_file_bytes(images_path);
  auto lbytes = read_file_bytes(labels_path);

  std::uint32_t imagic = read_be32(ibytes, 0, images_path);
  if (imagic != 0x00000803u) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%08X", imagic);
    throw std::runtime_error("idx: bad image magic " + std::string(buf) + " in " + images_path);
  }
  std::uint32_t lmagic = read_be32(lbytes, 0, labels_path);
  if (lmagic != 0x00000801u) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%08X", lmagic);
    throw std::runtime_error("idx: bad label magic " + std::string(buf) + " in " + labels_path);
  }

  std::uint32_t n = read_be32(ibytes, 4, images_path);
  std::uint32_t h = read_be32(ibytes, 8, images_path);
  std::uint32_t w = read_be32(ibytes, 12, images_path);
  std::uint32_t nl = read_be32(lbytes, 4, labels_path);
  if (n != nl)
    throw std::runtime_error("idx: image/label count mismatch: " + std::to_string(n) + " vs " +
                             std::to_string(nl));
  if (ibytes.size() < 16 + std::size_t(n) * h * w)
    throw std::runtime_error("idx: truncated image data in " + images_path);
  if (lbytes.size() < 8 + std::size_t(n))
    throw std::runtime_error("idx: truncated label data in " + labels_path);

  Dataset ds;
  ds.image_c = 1;
  ds.image_h = int(h);
  ds.image_w = int(w);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<float> img(std::size_t(h) * w);
    const std::uint8_t* src = ibytes.data() + 16 + std::size_t(i) * h * w;
    for (std::size_t p = 0; p < img.size(); ++p) img[p] = float(src[p]) / 255.0f;
    ds.images.push_back(std::move(img));
    int label = lbytes[8 + i];
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
    ds.train_indices.push_back(i);
  }
  ds.n_classes = max_label + 1;
  return ds;
}

Tensor<float> batch_tensor(const LabeledSet& set, const std::vector<std::size_t>& indices,
                           int c, int h, int w) {
  std::size_t item = std::size_t(c) * h * w;
  std::vector<float> data;
  data.reserve(indices.size() * item);
  for (std::size_t idx : indices) {
    if (idx >= set.size()) throw std::invalid_argument("batch: index out of range");
    if (set.x[idx].size() != item)
      throw std::invalid_argument("batch: sample size " + std::to_string(set.x[idx].size()) +
                                  " != expected " + std::to_string(item));
    data.insert(data.end(), set.x[idx].begin(), set.x[idx].end());
  }
  return Tensor<float>::from_values(
      {indices.size(), std::size_t(c), std::size_t(h), std::size_t(w)}, std::move(data));
}

std::vector<std::size_t> local_labels(const LabeledSet& set,
                                      const std::vector<std::size_t>& indices,
                                      const std::vector<int>& classes) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) {
    int global = set.y[idx];
    auto it = std::find(classes.begin(), classes.end(), global);
    if (it == classes.end())
      throw std::invalid_argument("label " + std::to_string(global) +
                                  " is outside the task's class list");
    out.push_back(std::size_t(it - classes.begin()));
  }
  return out;
}

}  // namespace daclab
