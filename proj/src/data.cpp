#include "whitenorm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "whitenorm/rng.hpp"

namespace whitenorm {

namespace {

std::uint32_t read_u32_be(std::istream& in, const char* what) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw IdxFormatError(std::string("truncated while reading ") + what);
  return (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
         (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t value) {
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(value >> 24),
      static_cast<unsigned char>(value >> 16),
      static_cast<unsigned char>(value >> 8),
      static_cast<unsigned char>(value)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

}  // namespace

Dataset gen_correlated_gaussians(Index dim, Index n, int classes, double rho,
                                 double separation, std::uint64_t seed) {
  if (dim < 1 || n < 1 || classes < 1) {
    throw InvalidInputError("gen_correlated_gaussians needs dim, n, classes >= 1");
  }
  if (std::abs(rho) >= 1.0) {
    throw InvalidInputError("correlation must satisfy |rho| < 1");
  }
  if (classes > dim) {
    throw InvalidInputError("simplex mean placement needs classes <= dim");
  }
  Matrix covariance = Matrix::Constant(dim, dim, rho);
  covariance.diagonal().setOnes();
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw InvalidInputError("equicorrelation matrix is not positive definite");
  }
  const Matrix chol = llt.matrixL();

  // class means: scaled coordinate vectors, centered; pairwise distance is
  // exactly `separation`
  Matrix means = Matrix::Zero(dim, classes);
  for (int c = 0; c < classes; ++c) {
    means(c, c) = separation / std::sqrt(2.0);
  }
  const Vector center = means.rowwise().mean();
  means.colwise() -= center;

  Rng rng = Rng::substream(seed, "data/gaussians");
  Dataset out;
  out.features.resize(dim, n);
  out.labels.resize(static_cast<std::size_t>(n));
  out.classes = classes;
  Vector z(dim);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    for (Index r = 0; r < dim; ++r) z(r) = rng.normal();
    out.features.col(i) = means.col(label) + chol * z;
    out.labels[static_cast<std::size_t>(i)] = label;
  }
  return out;
}

void subtract_feature_mean(Dataset& dataset) {
  const Vector mean = dataset.features.rowwise().mean();
  dataset.features.colwise() -= mean;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset,
                                          double test_fraction) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw InvalidInputError("test_fraction must lie in [0, 1)");
  }
  const Index n = dataset.size();
  const Index n_test = static_cast<Index>(
      std::floor(static_cast<double>(n) * test_fraction));
  const Index n_train = n - n_test;
  Dataset train, test;
  train.classes = test.classes = dataset.classes;
  train.features = dataset.features.leftCols(n_train);
  train.labels.assign(dataset.labels.begin(), dataset.labels.begin() + n_train);
  test.features = dataset.features.rightCols(n_test);
  test.labels.assign(dataset.labels.begin() + n_train, dataset.labels.end());
  return {std::move(train), std::move(test)};
}

IdxTensor read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxFormatError("cannot open " + path);
  const std::uint32_t magic = read_u32_be(in, "magic");
  if ((magic >> 16) != 0) {
    throw IdxFormatError("bad magic in " + path);
  }
  const std::uint32_t type = (magic >> 8) & 0xff;
  const std::uint32_t ndims = magic & 0xff;
  if (type != 0x08) {
    throw IdxFormatError("unsupported IDX type code " + std::to_string(type));
  }
  if (ndims != 1 && ndims != 3) {
    throw IdxFormatError("unsupported IDX rank " + std::to_string(ndims));
  }
  IdxTensor tensor;
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    const std::uint32_t size = read_u32_be(in, "dimension size");
    tensor.dims.push_back(static_cast<long>(size));
    total *= size;
  }
  std::vector<std::uint8_t> raw(total);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(in.gcount()) != total) {
    throw IdxFormatError("truncated data section in " + path);
  }
  tensor.values.resize(total);
  if (ndims == 3) {
    for (std::size_t i = 0; i < total; ++i) {
      tensor.values[i] = static_cast<double>(raw[i]) / 255.0;
    }
  } else {
    for (std::size_t i = 0; i < total; ++i) {
      tensor.values[i] = static_cast<double>(raw[i]);
    }
  }
  return tensor;
}

void write_idx(const std::string& path, const std::vector<long>& dims,
               const std::vector<std::uint8_t>& data) {
  std::size_t total = 1;
  for (long d : dims) total *= static_cast<std::size_t>(d);
  if (total != data.size()) {
    throw IdxFormatError("write_idx: dims do not match payload size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxFormatError("cannot open " + path + " for writing");
  write_u32_be(out, 0x0800u | static_cast<std::uint32_t>(dims.size()));
  for (long d : dims) write_u32_be(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, long limit) {
  const IdxTensor images = read_idx(images_path);
  const IdxTensor labels = read_idx(labels_path);
  if (images.dims.size() != 3) {
    throw IdxFormatError(images_path + " is not a 3-D image tensor");
  }
  if (labels.dims.size() != 1) {
    throw IdxFormatError(labels_path + " is not a 1-D label vector");
  }
  long n = images.dims[0];
  if (labels.dims[0] != n) {
    throw IdxFormatError("image and label counts disagree");
  }
  if (limit > 0 && limit < n) n = limit;
  const long pixels = images.dims[1] * images.dims[2];
  Dataset out;
  out.features.resize(pixels, n);
  out.labels.resize(static_cast<std::size_t>(n));
  int max_label = 0;
  for (long i = 0; i < n; ++i) {
    for (long p = 0; p < pixels; ++p) {
      out.features(p, i) = images.values[static_cast<std::size_t>(i * pixels + p)];
    }
    const int label = static_cast<int>(labels.values[static_cast<std::size_t>(i)]);
    out.labels[static_cast<std::size_t>(i)] = label;
    max_label = std::max(max_label, label);
  }
  out.classes = max_label + 1;
  return out;
}

Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInputError(path + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) header.push_back(cell);
  }
  long label_column = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label") label_column = static_cast<long>(i);
  }
  if (label_column < 0) {
    throw InvalidInputError(path + " has no column named \"label\"");
  }
  const std::size_t dim = header.size() - 1;
  if (dim == 0) throw InvalidInputError(path + " has no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> features;
    long column = 0;
    while (std::getline(row, cell, ',')) {
      if (column == label_column) {
        labels.push_back(std::stoi(cell));
        max_label = std::max(max_label, labels.back());
      } else {
        features.push_back(std::stod(cell));
      }
      ++column;
    }
    if (features.size() != dim) {
      throw InvalidInputError(path + ": row width disagrees with header");
    }
    rows.push_back(std::move(features));
  }
  Dataset out;
  out.features.resize(static_cast<Index>(dim), static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t p = 0; p < dim; ++p) {
      out.features(static_cast<Index>(p), static_cast<Index>(i)) = rows[i][p];
    }
  }
  require_finite(out.features, "csv dataset");
  out.labels = std::move(labels);
  out.classes = max_label + 1;
  return out;
}

BatchStream::BatchStream(const Dataset& dataset, Index batch_size,
                         std::uint64_t seed, bool shuffle, bool drop_partial)
    : dataset_(dataset), batch_size_(batch_size), drop_partial_(drop_partial) {
  if (batch_size_ < 1) throw InvalidInputError("batch size must be >= 1");
  if (drop_partial_ && batch_size_ > dataset.size()) {
    throw EmptyEpochError("batch size exceeds dataset size with partial "
                          "batches dropped");
  }
  order_.resize(static_cast<std::size_t>(dataset.size()));
  std::iota(order_.begin(), order_.end(), Index{0});
  if (shuffle) {
    Rng rng = Rng::substream(seed, "data/batches");
    rng.shuffle(order_);
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  std::size_t count =
      std::min(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
  if (drop_partial_ && count < static_cast<std::size_t>(batch_size_)) {
    cursor_ = order_.size();
    return std::nullopt;
  }
  Batch batch;
  batch.x.resize(dataset_.dim(), static_cast<Index>(count));
  batch.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Index idx = order_[cursor_ + i];
    batch.x.col(static_cast<Index>(i)) = dataset_.features.col(idx);
    batch.labels[i] = dataset_.labels[static_cast<std::size_t>(idx)];
  }
  cursor_ += count;
  return batch;
}

}  // namespace whitenorm
