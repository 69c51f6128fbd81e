#ifndef WHITENORM_DATA_HPP
#define WHITENORM_DATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "whitenorm/linalg.hpp"

namespace whitenorm {

struct Dataset {
  Matrix features;  // d x n, one column per example
  std::vector<int> labels;
  int classes = 0;

  Index dim() const { return features.rows(); }
  Index size() const { return features.cols(); }
};

// Gaussian classification data with an equicorrelation covariance
// ((1-rho) I + rho 11^T) and class means placed pairwise `separation`
// apart on a simplex. Labels are assigned round-robin. Requires |rho| < 1
// and classes <= dim.
Dataset gen_correlated_gaussians(Index dim, Index n, int classes, double rho,
                                 double separation, std::uint64_t seed);

// Subtracts the per-feature mean over all examples, in place.
void subtract_feature_mean(Dataset& dataset);

// Deterministic train/test split: the first ceil(n * (1 - test_fraction))
// examples stay in train.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset,
                                          double test_fraction);

// IDX container: big-endian magic {0, 0, type, ndims}, ndims big-endian
// 32-bit sizes, then raw data. Only unsigned-byte payloads (type 0x08) are
// accepted; 3-D tensors are read as images scaled to [0, 1], 1-D tensors as
// integer labels.
struct IdxTensor {
  std::vector<long> dims;
  std::vector<double> values;
};

IdxTensor read_idx(const std::string& path);
void write_idx(const std::string& path, const std::vector<long>& dims,
               const std::vector<std::uint8_t>& data);

// Pairs a 3-D image file with a 1-D label file, flattening each image into
// a feature column. `limit` > 0 keeps only the first examples.
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, long limit = -1);

// CSV with a header row; the column named "label" carries the class id and
// every other column is a feature.
Dataset load_csv_dataset(const std::string& path);

struct Batch {
  Matrix x;
  std::vector<int> labels;
};

// Single-consumer pass over the dataset: every example exactly once, order
// fixed by the seed, final partial batch emitted unless drop_partial.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, Index batch_size, std::uint64_t seed,
              bool shuffle, bool drop_partial = false);

  std::optional<Batch> next();
  const std::vector<Index>& order() const { return order_; }

 private:
  const Dataset& dataset_;
  Index batch_size_;
  bool drop_partial_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
};

}  // namespace whitenorm

#endif  // WHITENORM_DATA_HPP
