#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "das/dataset.hpp"
#include "das/errors.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

using namespace das;

namespace {

std::vector<unsigned char> fake_cifar(std::size_t records, unsigned char label = 3) {
  std::vector<unsigned char> bytes(records * kCifarRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    bytes[r * kCifarRecordBytes] = label;
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i) bytes[r * kCifarRecordBytes + i] = static_cast<unsigned char>(i % 256);
  }
  return bytes;
}

bool same_image(const LabeledSet& s, std::size_t a, std::size_t b) {
  const std::size_t per = s.images.size() / s.size();
  return std::equal(s.images.raw() + a * per, s.images.raw() + (a + 1) * per, s.images.raw() + b * per);
}

}  // namespace

TEST_CASE("cifar records") {
  SUBCASE("well-formed records decode label and normalized pixels") {
    auto bytes = fake_cifar(2, 7);
    LabeledSet s = parse_cifar_records(bytes, "fake");
    REQUIRE(s.size() == 2);
    CHECK(s.labels[1] == 7);
    CHECK(s.images.shape() == Shape{2, 3, 32, 32});
    CHECK(s.images[0] == doctest::Approx((1.0 / 255.0 - 0.5) / 0.25));
  }
  SUBCASE("a record one byte short reports its offset") {
    auto bytes = fake_cifar(3);
    bytes.pop_back();
    try {
      parse_cifar_records(bytes, "short.bin");
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("offset " + std::to_string(2 * kCifarRecordBytes)) != std::string::npos);
    }
  }
  SUBCASE("3072-byte records are rejected") {
    std::vector<unsigned char> bytes(3072 * 2, 0);
    CHECK_THROWS_AS(parse_cifar_records(bytes, "x"), FormatError);
  }
  SUBCASE("label out of range") {
    auto bytes = fake_cifar(2);
    bytes[kCifarRecordBytes] = 10;
    CHECK_THROWS_WITH_AS(parse_cifar_records(bytes, "x"), doctest::Contains("offset 3073"), FormatError);
  }
  SUBCASE("directory loader") {
    const auto dir = std::filesystem::temp_directory_path() / "das_cifar_fixture";
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, std::size_t n) {
      auto bytes = fake_cifar(n, static_cast<unsigned char>(n % 10));
      std::ofstream(dir / name, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    };
    for (int b = 1; b <= 5; ++b) write("data_batch_" + std::to_string(b) + ".bin", 4);
    write("test_batch.bin", 3);
    Dataset d = load_dataset(Cifar10Source{dir, 5}, 1);
    CHECK(d.train.size() == 15);
    CHECK(d.scorebatch.size() == 5);
    CHECK(d.val.size() == 3);
    CHECK_THROWS_AS(load_dataset(Cifar10Source{dir / "missing", 5}, 1), IoError);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("synthetic source") {
  SUBCASE("split sizes and labels") {
    Dataset d = load_dataset(SyntheticSource{}, 0);
    CHECK(d.train.size() == 1400);
    CHECK(d.val.size() == 400);
    CHECK(d.scorebatch.size() == 200);
    CHECK(d.train.images.shape() == Shape{1400, 3, 16, 16});
    for (int k = 0; k < 10; ++k) CHECK(std::count(d.scorebatch.labels.begin(), d.scorebatch.labels.end(), k) == 20);
  }
  SUBCASE("noise 0 makes every image of a class identical") {
    SyntheticSource src;
    src.noise = 0.0;
    src.samples_per_class = 20;
    Dataset d = load_dataset(src, 5);
    for (std::size_t i = 1; i < d.train.size(); ++i) {
      if (d.train.labels[i] == d.train.labels[0]) CHECK(same_image(d.train, 0, i));
      else CHECK_FALSE(same_image(d.train, 0, i));
    }
  }
  SUBCASE("same seed gives the same partition, another seed does not") {
    Dataset a = load_dataset(SyntheticSource{}, 9), b = load_dataset(SyntheticSource{}, 9), c = load_dataset(SyntheticSource{}, 10);
    CHECK(a.train.images == b.train.images);
    CHECK(a.val.images == b.val.images);
    CHECK(a.scorebatch.labels == b.scorebatch.labels);
    CHECK_FALSE(a.train.images == c.train.images);
  }
  SUBCASE("splits are disjoint") {
    Dataset d = load_dataset(SyntheticSource{}, 2);
    std::set<std::vector<double>> seen;
    auto add = [&](const LabeledSet& s) {
      const std::size_t per = s.images.size() / s.size();
      for (std::size_t i = 0; i < s.size(); ++i) seen.emplace(s.images.raw() + i * per, s.images.raw() + (i + 1) * per);
    };
    add(d.train);
    add(d.val);
    add(d.scorebatch);
    CHECK(seen.size() == 2000);
  }
  SUBCASE("invalid parameters") {
    SyntheticSource src;
    src.noise = -1.0;
    CHECK_THROWS_AS(load_dataset(src, 0), ConfigError);
  }
}

TEST_CASE("scoring batch") {
  Dataset d = load_dataset(SyntheticSource{}, 0);
  LabeledSet a = scoring_batch(d.scorebatch, 64, 3), b = scoring_batch(d.scorebatch, 64, 3), c = scoring_batch(d.scorebatch, 64, 4);
  CHECK(a.size() == 64);
  CHECK(a.images == b.images);
  CHECK_FALSE(a.images == c.images);
  std::set<std::vector<double>> rows;
  for (std::size_t i = 0; i < a.size(); ++i) rows.emplace(a.images.raw() + i * 768, a.images.raw() + (i + 1) * 768);
  CHECK(rows.size() == 64);
  // a smaller batch from the same seed is a prefix of the larger one
  LabeledSet small = scoring_batch(d.scorebatch, 16, 3);
  CHECK(std::equal(small.labels.begin(), small.labels.end(), a.labels.begin()));
  CHECK_THROWS_AS(scoring_batch(d.scorebatch, 1, 0), ConfigError);
  CHECK_THROWS_AS(scoring_batch(d.scorebatch, 201, 0), ConfigError);
}

TEST_CASE("labeled set files round trip") {
  Dataset d = load_dataset(SyntheticSource{}, 0);
  const auto path = std::filesystem::temp_directory_path() / "das_set.dasw";
  write_labeled_set(d.val, path);
  LabeledSet back = read_labeled_set(path);
  CHECK(back.images == d.val.images);
  CHECK(back.labels == d.val.labels);
  std::filesystem::remove(path);
}
