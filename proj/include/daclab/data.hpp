#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daclab/image.hpp"
#include "daclab/tensor.hpp"

namespace daclab {

// Labeled pool of CHW float images with a fixed per-class train/test split.
struct Dataset {
  int image_c = 0;
  int image_h = 0;
  int image_w = 0;
  int n_classes = 0;
  std::vector<std::vector<float>> images;  // CHW, values in [0,1]
  std::vector<int> labels;                 // 0..n_classes-1
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t size() const { return images.size(); }
};

struct LabeledSet {
  std::vector<std::vector<float>> x;  // CHW
  std::vector<int> y;                 // global label ids
  std::size_t size() const { return x.size(); }
};

// One task of a task-incremental stream.
struct Experience {
  int task_id = 0;              // 1-based position in the stream
  std::vector<int> classes;     // global label ids, ascending
  LabeledSet train;
  LabeledSet test;
};

// Procedurally rendered shape/color/texture classification set. Shapes repeat
// across classes while hue and texture vary, so tasks compete for features.
Dataset shapes_dataset(std::uint64_t seed, int n_classes, int samples_per_class,
                       int image_size);

// Deterministic class partition into n_tasks experiences of classes_per_task
// disjoint classes each, keeping the dataset's train/test split.
std::vector<Experience> make_split_stream(const Dataset& dataset, int n_tasks,
                                          int classes_per_task, std::uint64_t seed);

// IDX ubyte pair (magic 0x803 images / 0x801 labels, big-endian dims).
// Pixels are scaled to [0,1]; grayscale images keep one channel.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Stack samples into a (B,C,H,W) batch tensor.
Tensor<float> batch_tensor(const LabeledSet& set, const std::vector<std::size_t>& indices,
                           int c, int h, int w);

// Map global labels onto positions in the experience's class list.
std::vector<std::size_t> local_labels(const LabeledSet& set,
                                      const std::vector<std::size_t>& indices,
                                      const std::vector<int>& classes);

}  // namespace daclab
