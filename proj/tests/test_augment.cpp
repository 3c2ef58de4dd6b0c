#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "daclab/augment.hpp"
#include "daclab/serialize.hpp"

using namespace daclab;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

Image test_poster(int side = 48) {
  Image img = Image::make(3, side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      img.at(0, y, x) = float((x / 8 + y / 8) % 2);
      img.at(1, y, x) = float(x) / side;
      img.at(2, y, x) = float(y) / side;
    }
  return img;
}

AugConfig identity_aug(int size) {
  AugConfig aug;
  aug.out_h = size;
  aug.out_w = size;
  aug.crop_scale_min = 1.0;
  aug.crop_scale_max = 1.0;
  aug.rotation_deg = 0;
  aug.flip_p = 0;
  aug.jitter = 0;
  aug.cutmix = false;
  return aug;
}

}  // namespace

TEST_CASE("cutmix box arithmetic") {
  RandomStream rng(1, "cutmix");
  auto x1 = Image::make(3, 32, 32, 0.0f);
  auto x2 = Image::make(3, 32, 32, 1.0f);

  SUBCASE("m=1 leaves x1 unchanged") {
    auto out = cutmix_with_m(x1, x2, 1.0, rng);
    for (float v : out.data) CHECK(v == 0.0f);
  }
  SUBCASE("m=0 pastes x2 entirely") {
    auto out = cutmix_with_m(x1, x2, 0.0, rng);
    for (float v : out.data) CHECK(v == 1.0f);
  }
  SUBCASE("m=0.75 on 32x32 gives a 16x16 box, area fraction exactly 0.25") {
    auto out = cutmix_with_m(x1, x2, 0.75, rng);
    int ones = 0;
    for (float v : out.data) ones += v == 1.0f;
    CHECK(ones == 3 * 16 * 16);
  }
  SUBCASE("shape mismatch raises") {
    auto small = Image::make(3, 16, 16, 0.5f);
    CHECK_THROWS_AS(cutmix_with_m(x1, small, 0.5, rng), std::invalid_argument);
  }
}

TEST_CASE("noise source emits iid uniform pixels with mean 0.5") {
  OODSource source = OODSource::Noise();
  AugConfig aug;
  aug.out_h = 20;
  aug.out_w = 20;
  aug.cutmix = false;
  OODSampler sampler(source, aug, RandomStream(3, "noise_test"));
  double acc = 0;
  std::size_t count = 0;
  while (count < 100000) {
    auto batch = sampler.next_batch(16);
    for (float v : batch.values()) {
      acc += v;
      ++count;
      CHECK(v >= 0.0f);
      CHECK(v < 1.0f);
    }
  }
  CHECK(std::fabs(acc / double(count) - 0.5) < 0.01);
}

TEST_CASE("identity pipeline returns the resized original every time") {
  auto poster = test_poster();
  auto path = temp_path("daclab_poster.ppm");
  write_ppm(poster, path.string());

  auto aug = identity_aug(24);
  OODSampler sampler(OODSource::SingleImage(path.string()), aug, RandomStream(5, "identity"));
  auto reference = resize_bilinear(read_image(path.string()), 24, 24);
  for (int i = 0; i < 3; ++i) {
    auto batch = sampler.next_batch(2);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t p = 0; p < reference.data.size(); ++p)
        CHECK(batch.values()[b * reference.data.size() + p] == reference.data[p]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("same stream reproduces identical batches; items are batch-size invariant") {
  auto poster = test_poster();
  auto path = temp_path("daclab_poster2.ppm");
  write_ppm(poster, path.string());

  AugConfig aug;
  aug.out_h = 16;
  aug.out_w = 16;
  OODSource source = OODSource::SingleImage(path.string());

  OODSampler s1(source, aug, RandomStream(9, "det"));
  OODSampler s2(source, aug, RandomStream(9, "det"));
  auto b1 = s1.next_batch(8);
  auto b2 = s2.next_batch(8);
  CHECK(b1.values() == b2.values());

  // item n is identical no matter how batches chunk the stream
  OODSampler s3(source, aug, RandomStream(9, "det"));
  s3.next_batch(3);
  auto tail = s3.next_batch(5);  // items 3..7
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t p = 0; p < 16 * 16 * 3; ++p)
      CHECK(tail.values()[i * 768 + p] == b1.values()[(i + 3) * 768 + p]);

  // different stream gives different batches
  OODSampler s4(source, aug, RandomStream(10, "det"));
  CHECK(s4.next_batch(8).values() != b1.values());
  std::filesystem::remove(path);
}

TEST_CASE("augmented samples stay in [0,1] with the configured shape") {
  auto poster = test_poster();
  auto path = temp_path("daclab_poster3.ppm");
  write_ppm(poster, path.string());
  AugConfig aug;
  aug.out_h = 12;
  aug.out_w = 14;
  OODSampler sampler(OODSource::SingleImage(path.string()), aug, RandomStream(11, "range"));
  auto batch = sampler.next_batch(32);
  CHECK(batch.shape() == std::vector<std::size_t>{32, 3, 12, 14});
  for (float v : batch.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  std::filesystem::remove(path);
}

TEST_CASE("real_data source draws from the experience") {
  auto ds = shapes_dataset(2, 4, 8, 16);
  auto stream = make_split_stream(ds, 1, 4, 1);
  auto exp = std::make_shared<Experience>(stream[0]);
  AugConfig aug;
  aug.out_h = 16;
  aug.out_w = 16;
  OODSampler sampler(OODSource::RealData(exp), aug, RandomStream(1, "real"));
  auto batch = sampler.next_batch(4);
  CHECK(batch.shape()[0] == 4);
  for (float v : batch.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("image folder source requires images") {
  auto dir = temp_path("daclab_empty_folder");
  std::filesystem::create_directories(dir);
  AugConfig aug;
  CHECK_THROWS_AS(OODSampler(OODSource::ImageFolder(dir.string()), aug, RandomStream(1, "f")),
                  std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("unreadable single image raises") {
  AugConfig aug;
  CHECK_THROWS_AS(
      OODSampler(OODSource::SingleImage("/nonexistent/image.ppm"), aug, RandomStream(1, "x")),
      std::runtime_error);
}

TEST_CASE("sample_ood_batch matches the sampler item stream") {
  auto poster = test_poster();
  auto path = temp_path("daclab_poster4.ppm");
  write_ppm(poster, path.string());
  AugConfig aug;
  aug.out_h = 16;
  aug.out_w = 16;
  OODSource source = OODSource::SingleImage(path.string());

  auto direct = sample_ood_batch(source, aug, 4, RandomStream(21, "oneshot"), 2);
  OODSampler sampler(source, aug, RandomStream(21, "oneshot"));
  sampler.next_batch(2);
  auto streamed = sampler.next_batch(4);
  CHECK(direct.values() == streamed.values());
  std::filesystem::remove(path);
}

TEST_CASE("patch cache round trips and cycles deterministically") {
  auto poster = test_poster();
  auto path = temp_path("daclab_poster5.ppm");
  auto cache = temp_path("daclab_patches.blob");
  write_ppm(poster, path.string());
  AugConfig aug;
  aug.out_h = 8;
  aug.out_w = 8;
  OODSampler sampler(OODSource::SingleImage(path.string()), aug, RandomStream(31, "cache"));
  sampler.save_cache(cache.string(), 10);

  PatchCacheSampler cached(cache.string());
  CHECK(cached.patch_count() == 10);
  auto b1 = cached.next_batch(6);
  auto b2 = cached.next_batch(6);  // patches 6..9 then wraps to 0,1
  CHECK(b1.shape() == std::vector<std::size_t>{6, 3, 8, 8});
  for (std::size_t p = 0; p < 192; ++p) CHECK(b2.values()[4 * 192 + p] == b1.values()[p]);

  // cached patches equal the live sampler items
  auto live = sampler.item(0);
  for (std::size_t p = 0; p < 192; ++p) CHECK(b1.values()[p] == live.data[p]);

  std::filesystem::remove(path);
  std::filesystem::remove(cache);
}
