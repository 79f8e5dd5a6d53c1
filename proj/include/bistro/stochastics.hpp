#pragma once

#include "bistro/core.hpp"

#include <cstdint>
#include <utility>

namespace bistro {

struct StreamTag {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t offset = 0;  // counter value at the first draw of the batch
};

/// Counter-based random stream. The n-th 64-bit word of a stream is a pure
/// function of (seed, stream_id, n), so a stream can be copied, sent to
/// another thread, or re-created and it yields the same sequence.
///
/// A single instance must not be advanced from two threads at once.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in (0, 1].
  double next_uniform();
  double next_normal();

  /// Deterministic child stream keyed by `index`; does not advance this stream.
  RngStream substream(std::uint64_t index) const;

  StreamTag tag() const { return {seed_, stream_id_, counter_}; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Two children that are independent of each other and of the parent's
/// future draws. Pure in the parent's state.
std::pair<RngStream, RngStream> split(const RngStream& stream);

struct NormalDistribution {
  double mean = 0.0;
  double stddev = 1.0;
};

// Only the normal family is needed by the built-in problems; the descriptor
// is a separate type so other families can be added next to it.
using Distribution = NormalDistribution;

// Row-major so each realization of xi is a contiguous row.
using SampleMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SampleBatch {
  SampleMatrix draws;  // n_samples x dim_xi
  StreamTag stream_tag;

  Eigen::Index size() const { return draws.rows(); }
  Eigen::Index dim() const { return draws.cols(); }
};

SampleBatch draw_normal(RngStream& stream, Eigen::Index n, Eigen::Index dim,
                        double mean, double stddev);
SampleBatch draw(RngStream& stream, Eigen::Index n, Eigen::Index dim,
                 const Distribution& dist);

}  // namespace bistro
