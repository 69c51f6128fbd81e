#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "whitenorm/data.hpp"

using namespace whitenorm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Matrix sample_covariance(const Matrix& x) {
  Matrix centered = x;
  centered.colwise() -= Vector(x.rowwise().mean());
  return (centered * centered.transpose()) / static_cast<double>(x.cols());
}

}  // namespace

TEST_CASE("uncorrelated draws have vanishing off-diagonal covariance") {
  const Dataset data = gen_correlated_gaussians(4, 10000, 1, 0.0, 0.0, 7);
  const Matrix cov = sample_covariance(data.features);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) {
      if (i != j) CHECK(std::abs(cov(i, j)) < 0.05);
    }
  }
}

TEST_CASE("strongly correlated draws recover the target correlation") {
  const Dataset data = gen_correlated_gaussians(2, 10000, 1, 0.99, 0.0, 11);
  const Matrix cov = sample_covariance(data.features);
  const double corr = cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1));
  CHECK(std::abs(corr - 0.99) < 0.01);
}

TEST_CASE("class means sit pairwise `separation` apart") {
  const double separation = 2.0;
  const Dataset data = gen_correlated_gaussians(3, 30000, 3, 0.0, separation, 13);
  Matrix sums = Matrix::Zero(3, 3);
  Vector counts = Vector::Zero(3);
  for (Index i = 0; i < data.size(); ++i) {
    sums.col(data.labels[static_cast<std::size_t>(i)]) += data.features.col(i);
    counts(data.labels[static_cast<std::size_t>(i)]) += 1.0;
  }
  for (int c = 0; c < 3; ++c) sums.col(c) /= counts(c);
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      CHECK((sums.col(a) - sums.col(b)).norm() ==
            doctest::Approx(separation).epsilon(0.05));
    }
  }
}

TEST_CASE("single-point dataset is valid") {
  const Dataset data = gen_correlated_gaussians(3, 1, 1, 0.5, 1.0, 17);
  CHECK(data.size() == 1);
  CHECK(data.labels[0] == 0);
  CHECK(data.features.allFinite());
}

TEST_CASE("generator input validation") {
  CHECK_THROWS_AS(gen_correlated_gaussians(2, 10, 1, 1.0, 0.0, 1),
                  InvalidInputError);
  CHECK_THROWS_AS(gen_correlated_gaussians(2, 10, 1, -1.0, 0.0, 1),
                  InvalidInputError);
  CHECK_THROWS_AS(gen_correlated_gaussians(2, 10, 3, 0.0, 1.0, 1),
                  InvalidInputError);
}

TEST_CASE("generation is seeded") {
  const Dataset a = gen_correlated_gaussians(3, 50, 2, 0.3, 1.0, 99);
  const Dataset b = gen_correlated_gaussians(3, 50, 2, 0.3, 1.0, 99);
  CHECK((a.features.array() == b.features.array()).all());
  const Dataset c = gen_correlated_gaussians(3, 50, 2, 0.3, 1.0, 100);
  CHECK((a.features.array() != c.features.array()).any());
}

TEST_CASE("read_idx parses a byte-built image fixture") {
  // two 1x1 images with pixel values 0 and 255
  const std::string path = temp_path("whitenorm_idx_images.bin");
  std::ofstream out(path, std::ios::binary);
  const unsigned char bytes[] = {0, 0, 8, 3,  // magic: ubyte, rank 3
                                 0, 0, 0, 2,  // 2 images
                                 0, 0, 0, 1,  // 1 row
                                 0, 0, 0, 1,  // 1 column
                                 0x00, 0xFF};
  out.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  out.close();
  const IdxTensor tensor = read_idx(path);
  REQUIRE(tensor.dims == std::vector<long>({2, 1, 1}));
  CHECK(tensor.values[0] == 0.0);
  CHECK(tensor.values[1] == 1.0);
  std::filesystem::remove(path);
}

TEST_CASE("read_idx parses a byte-built label fixture") {
  const std::string path = temp_path("whitenorm_idx_labels.bin");
  std::ofstream out(path, std::ios::binary);
  const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2};
  out.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  out.close();
  const IdxTensor tensor = read_idx(path);
  REQUIRE(tensor.dims == std::vector<long>({3}));
  CHECK(tensor.values == std::vector<double>({0.0, 1.0, 2.0}));
  std::filesystem::remove(path);
}

TEST_CASE("read_idx rejects malformed files") {
  const std::string path = temp_path("whitenorm_idx_bad.bin");
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8};  // truncated magic
    out.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  }
  CHECK_THROWS_AS(read_idx(path), IdxFormatError);
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 0x0D, 1, 0, 0, 0, 1, 5};  // float type
    out.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  }
  CHECK_THROWS_AS(read_idx(path), IdxFormatError);
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char bytes[] = {1, 1, 8, 1, 0, 0, 0, 1, 5};  // bad magic
    out.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  }
  CHECK_THROWS_AS(read_idx(path), IdxFormatError);
  {
    std::ofstream out(path, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 4, 5};  // short data
    out.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  }
  CHECK_THROWS_AS(read_idx(path), IdxFormatError);
  std::filesystem::remove(path);
}

TEST_CASE("IDX write/read round trip") {
  const std::string path = temp_path("whitenorm_idx_roundtrip.bin");
  std::vector<std::uint8_t> payload(2 * 3 * 4);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    payload[i] = static_cast<std::uint8_t>((i * 37) % 256);
  }
  write_idx(path, {2, 3, 4}, payload);
  const IdxTensor tensor = read_idx(path);
  REQUIRE(tensor.dims == std::vector<long>({2, 3, 4}));
  for (std::size_t i = 0; i < payload.size(); ++i) {
    CHECK(tensor.values[i] == static_cast<double>(payload[i]) / 255.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("idx dataset pairs images with labels") {
  const std::string images = temp_path("whitenorm_idx_ds_images.bin");
  const std::string labels = temp_path("whitenorm_idx_ds_labels.bin");
  write_idx(images, {3, 2, 2}, {/* image 0 */ 0, 51, 102, 153,
                                /* image 1 */ 204, 255, 0, 51,
                                /* image 2 */ 10, 20, 30, 40});
  write_idx(labels, {3}, {2, 0, 1});
  const Dataset data = load_idx_dataset(images, labels);
  CHECK(data.dim() == 4);
  CHECK(data.size() == 3);
  CHECK(data.classes == 3);
  CHECK(data.labels == std::vector<int>({2, 0, 1}));
  CHECK(data.features(1, 0) == doctest::Approx(51.0 / 255.0));
  const Dataset limited = load_idx_dataset(images, labels, 2);
  CHECK(limited.size() == 2);
  std::filesystem::remove(images);
  std::filesystem::remove(labels);
}

TEST_CASE("csv loader reads features and the label column") {
  const std::string path = temp_path("whitenorm_data.csv");
  {
    std::ofstream out(path);
    out << "f0,label,f1\n";
    out << "0.5,1,-2.0\n";
    out << "1.5,0,3.25\n";
  }
  const Dataset data = load_csv_dataset(path);
  CHECK(data.dim() == 2);
  CHECK(data.size() == 2);
  CHECK(data.classes == 2);
  CHECK(data.labels == std::vector<int>({1, 0}));
  CHECK(data.features(0, 0) == 0.5);
  CHECK(data.features(1, 0) == -2.0);
  CHECK(data.features(1, 1) == 3.25);
  std::filesystem::remove(path);
}

TEST_CASE("csv loader requires a label column") {
  const std::string path = temp_path("whitenorm_data_nolabel.csv");
  {
    std::ofstream out(path);
    out << "f0,f1\n0.5,1.0\n";
  }
  CHECK_THROWS_AS(load_csv_dataset(path), InvalidInputError);
  std::filesystem::remove(path);
}

TEST_CASE("batch stream covers the dataset exactly once") {
  Dataset data;
  data.features = Matrix::Random(2, 10);
  data.labels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  data.classes = 10;

  BatchStream stream(data, 3, 5, true);
  std::vector<Index> sizes;
  std::map<int, int> seen;
  while (auto batch = stream.next()) {
    sizes.push_back(batch->x.cols());
    for (int l : batch->labels) seen[l]++;
  }
  CHECK(sizes == std::vector<Index>({3, 3, 3, 1}));
  CHECK(seen.size() == 10);
  for (const auto& [label, count] : seen) CHECK(count == 1);
}

TEST_CASE("unshuffled batches keep the original order") {
  Dataset data;
  data.features = Matrix::Random(1, 5);
  data.labels = {0, 1, 2, 3, 4};
  data.classes = 5;
  BatchStream stream(data, 2, 99, false);
  std::vector<int> order;
  while (auto batch = stream.next()) {
    for (int l : batch->labels) order.push_back(l);
  }
  CHECK(order == std::vector<int>({0, 1, 2, 3, 4}));
}

TEST_CASE("batch order is reproducible per seed") {
  Dataset data;
  data.features = Matrix::Random(1, 64);
  data.labels.assign(64, 0);
  for (int i = 0; i < 64; ++i) data.labels[static_cast<std::size_t>(i)] = i;
  data.classes = 64;
  BatchStream a(data, 8, 7, true);
  BatchStream b(data, 8, 7, true);
  CHECK(a.order() == b.order());
  BatchStream c(data, 8, 8, true);
  CHECK(a.order() != c.order());
}

TEST_CASE("dropping partial batches on an undersized dataset is an error") {
  Dataset data;
  data.features = Matrix::Random(1, 3);
  data.labels = {0, 0, 0};
  data.classes = 1;
  CHECK_THROWS_AS(BatchStream(data, 5, 1, false, true), EmptyEpochError);
}

TEST_CASE("per-feature mean subtraction centers every row") {
  Dataset data = gen_correlated_gaussians(3, 100, 1, 0.2, 0.0, 3);
  data.features.row(1).array() += 4.0;
  subtract_feature_mean(data);
  CHECK(data.features.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dataset splitting keeps sizes and order") {
  Dataset data;
  data.features = Matrix::Random(2, 10);
  data.labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  data.classes = 2;
  const auto [train, test] = split_dataset(data, 0.3);
  CHECK(train.size() == 7);
  CHECK(test.size() == 3);
  CHECK((train.features - data.features.leftCols(7)).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(test.labels == std::vector<int>({1, 0, 1}));
}
