#include "bistro/stochastics.hpp"

#include <cmath>
#include <numbers>

namespace bistro {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream_id) {
  return mix64(seed ^ mix64(stream_id + 0x632BE59BD9B4E019ULL));
}

}  // namespace

std::string_view to_string(Fidelity f) {
  switch (f) {
    case Fidelity::high: return "high";
    case Fidelity::low: return "low";
    case Fidelity::mlmc: return "mlmc";
  }
  return "?";
}

std::string_view to_string(EvalKind k) {
  return k == EvalKind::eval ? "eval" : "grad";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::setup: return "setup";
    case Phase::warm_start: return "warm_start";
    case Phase::trust: return "trust";
    case Phase::sgd: return "sgd";
  }
  return "?";
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), key_(derive_key(seed, stream_id)) {}

std::uint64_t RngStream::next_u64() {
  // Two rounds of the splitmix finalizer over (key, counter).
  const std::uint64_t c = counter_++;
  return mix64(mix64(key_ + c * kGolden) ^ key_);
}

double RngStream::next_uniform() {
  return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double RngStream::next_normal() {
  // Box-Muller, cosine branch only so each draw costs a fixed two words.
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::substream(std::uint64_t index) const {
  return RngStream(seed_, mix64(stream_id_ * kGolden + mix64(index + 1)));
}

std::pair<RngStream, RngStream> split(const RngStream& stream) {
  const std::uint64_t base = mix64(stream.stream_id() ^ mix64(stream.counter()));
  return {RngStream(stream.seed(), mix64(base + 0xA5A5A5A5ULL)),
          RngStream(stream.seed(), mix64(base + 0x5A5A5A5AULL))};
}

SampleBatch draw_normal(RngStream& stream, Eigen::Index n, Eigen::Index dim,
                        double mean, double stddev) {
  if (n < 1 || dim < 1)
    throw std::invalid_argument("draw_normal: n and dim must be >= 1");
  if (!(stddev >= 0.0))
    throw std::invalid_argument("draw_normal: stddev must be >= 0");
  SampleBatch batch;
  batch.stream_tag = stream.tag();
  batch.draws.resize(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      batch.draws(i, j) = mean + stddev * stream.next_normal();
  return batch;
}

SampleBatch draw(RngStream& stream, Eigen::Index n, Eigen::Index dim,
                 const Distribution& dist) {
  return draw_normal(stream, n, dim, dist.mean, dist.stddev);
}

}  // namespace bistro
