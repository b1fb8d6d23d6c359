#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "thinner/data.hpp"
#include "thinner/error.hpp"

using namespace thinner;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / "thinner_data_test") {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

}  // namespace

TEST_CASE("IDX parsing") {
  TempDir tmp;
  const auto images = tmp.path / "images.idx";
  const auto labels = tmp.path / "labels.idx";

  // Hand-built 10-image 2x3 file; image i has pixel values i * 25 + j.
  std::vector<unsigned char> img = be32(0x00000803);
  for (auto v : {10u, 2u, 3u})
    for (auto b : be32(v)) img.push_back(b);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 6; ++j) img.push_back(static_cast<unsigned char>(i * 25 + j));
  img[img.size() - 1] = 255;
  std::vector<unsigned char> lab = be32(0x00000801);
  for (auto b : be32(10)) lab.push_back(b);
  for (int i = 0; i < 10; ++i) lab.push_back(static_cast<unsigned char>(i % 4));

  write_bytes(images, img);
  write_bytes(labels, lab);
  const Dataset data = load_idx_images(images, labels);
  CHECK(data.size() == 10);
  CHECK(data.images.shape() == Shape{10, 1, 2, 3});
  CHECK(data.classes == 4);
  CHECK(data.labels[5] == 1);
  CHECK(data.images(3, 0, 1, 2) == (3 * 25 + 5) / 255.0);
  CHECK(data.images(9, 0, 1, 2) == 1.0);
  CHECK_NOTHROW(data.validate());

  SUBCASE("bad magic") {
    auto bad = img;
    bad[2] = 0;
    bad[3] = 0;
    write_bytes(images, bad);
    CHECK_THROWS_AS(load_idx_images(images, labels), FormatError);
  }
  SUBCASE("count mismatch") {
    auto bad = lab;
    bad[7] = 9;
    bad.pop_back();
    write_bytes(labels, bad);
    CHECK_THROWS_AS(load_idx_images(images, labels), FormatError);
  }
  SUBCASE("truncated") {
    auto bad = img;
    bad.resize(bad.size() - 4);
    write_bytes(images, bad);
    CHECK_THROWS_AS(load_idx_images(images, labels), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_idx_images(tmp.path / "nope", labels), IoError);
  }
}

TEST_CASE("IDX writer round trip") {
  TempDir tmp;
  for (std::size_t channels : {1u, 3u}) {
    Rng rng(channels);
    Dataset data{Tensor({7, channels, 4, 5}), {}, 3};
    for (double& p : data.images.data()) p = static_cast<double>(rng.below(256)) / 255.0;
    for (int i = 0; i < 7; ++i) data.labels.push_back(i % 3);
    write_idx(data, tmp.path / "i", tmp.path / "l");
    const Dataset back = load_idx_images(tmp.path / "i", tmp.path / "l");
    CHECK(back.images == data.images);
    CHECK(back.labels == data.labels);
    CHECK(back.classes == data.classes);
  }
}

TEST_CASE("synthetic generators") {
  const SyntheticTask bars{"bars", 1, 12, 12, 2, 0.1};
  const Dataset a = generate_synthetic(bars, 100, 5);
  const Dataset b = generate_synthetic(bars, 100, 5);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(!(generate_synthetic(bars, 100, 6).images == a.images));
  CHECK(std::count(a.labels.begin(), a.labels.end(), 0) == 50);
  CHECK_NOTHROW(a.validate());

  const Dataset blobs = generate_synthetic({"blobs", 2, 8, 8, 7, 0.2}, 103, 1);
  std::vector<int> counts(7, 0);
  for (int l : blobs.labels) ++counts[static_cast<std::size_t>(l)];
  CHECK(*std::max_element(counts.begin(), counts.end()) -
            *std::min_element(counts.begin(), counts.end()) <=
        1);
  CHECK_NOTHROW(blobs.validate());

  CHECK_THROWS_AS(generate_synthetic({"spirals", 1, 8, 8, 2, 0.1}, 10, 1), ValueError);
  CHECK_THROWS_AS(generate_synthetic(bars, 1, 1), ValueError);
  CHECK_THROWS_AS(generate_synthetic({"bars", 1, 8, 8, 3, 0.1}, 10, 1), ValueError);
}

TEST_CASE("bars task is solvable by a hand-coded edge filter") {
  // Horizontal-line detector and its transpose; the stronger total rectified
  // response decides the class.
  const Tensor h_filter(Shape{1, 1, 3, 3}, {-1, -1, -1, 2, 2, 2, -1, -1, -1});
  const Tensor v_filter(Shape{1, 1, 3, 3}, {-1, 2, -1, -1, 2, -1, -1, 2, -1});
  const Dataset data = generate_synthetic({"bars", 1, 12, 12, 2, 0.1}, 1000, 17);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor img({1, 12, 12});
    std::copy_n(data.images.data().begin() + static_cast<long>(i * 144), 144,
                img.data().begin());
    double h = 0.0, v = 0.0;
    for (double x : oracle::nested_loop_conv(img, h_filter, 1, 1).data()) h += std::max(x, 0.0);
    for (double x : oracle::nested_loop_conv(img, v_filter, 1, 1).data()) v += std::max(x, 0.0);
    const int predicted = h > v ? 0 : 1;
    if (predicted == data.labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / 1000.0 >= 0.95);
}

TEST_CASE("split and batches") {
  const Dataset data = generate_synthetic({"blobs", 1, 4, 4, 2, 0.1}, 10, 3);
  const auto [first, second] = split(data, 0.5, 9);
  CHECK(first.size() == 5);
  CHECK(second.size() == 5);
  const auto [again, rest] = split(data, 0.5, 9);
  CHECK(again.images == first.images);
  CHECK(again.labels == first.labels);
  CHECK_THROWS_AS(split(data, 0.05, 1), ValueError);
  CHECK_THROWS_AS(split(data, 1.0, 1), ValueError);

  // Every sample lands in exactly one side.
  std::multiset<double> all, parts;
  for (std::size_t i = 0; i < data.size(); ++i) all.insert(data.images[i * 16]);
  for (const Dataset* d : {&first, &second})
    for (std::size_t i = 0; i < d->size(); ++i) parts.insert(d->images[i * 16]);
  CHECK(all == parts);

  for (std::size_t bs : {1u, 3u, 7u, 50u}) {
    const auto plan = batches(23, bs, 4);
    std::vector<std::size_t> seen;
    for (const auto& b : plan) {
      CHECK(b.size() <= bs);
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> expected(23);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    CHECK(seen == expected);
  }
  CHECK(batches(23, 5, 4) == batches(23, 5, 4));
  CHECK(batches(23, 5, 4) != batches(23, 5, 5));
}
