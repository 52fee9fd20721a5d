#pragma once

#include <array>
#include <cstdint>

namespace agekf {

/// Philox4x64-10 counter-based generator (Salmon et al., "Parallel random
/// numbers: as easy as 1, 2, 3"). A block is a pure function of (key,
/// counter), so ensemble members can be propagated in parallel while the
/// produced noise stays bit-identical for a given seed.
struct Philox4x64 {
  using key_type = std::array<std::uint64_t, 2>;
  using counter_type = std::array<std::uint64_t, 4>;

  static counter_type block(key_type key, counter_type ctr);
};

/// One independent random stream addressed by (seed, stream, substream).
///
/// Filter code derives `stream` from the ensemble-member index and
/// `substream` from (step index, draw site), which makes every draw
/// reproducible regardless of evaluation order or thread count.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream);

  /// Uniform draw in (0, 1]; never returns 0 so it is safe under log().
  double uniform();

  /// Standard normal draw (Box-Muller; draws come in deterministic pairs).
  double normal();

 private:
  std::uint64_t next_u64();

  Philox4x64::key_type key_;
  std::uint64_t substream_;
  std::uint64_t block_index_ = 0;
  Philox4x64::counter_type buffer_{};
  int buffer_pos_ = 4;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Draw sites used to keep noise sources in distinct substreams.
namespace draw_site {
inline constexpr std::uint64_t forecast = 0;
inline constexpr std::uint64_t observation = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t synthetic_obs = 3;
inline constexpr std::uint64_t n_sites = 4;
}  // namespace draw_site

/// Substream id for step `k` at a given draw site.
inline std::uint64_t substream_for(std::uint64_t step, std::uint64_t site) {
  return step * draw_site::n_sites + site;
}

}  // namespace agekf
