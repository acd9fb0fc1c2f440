#include "drivelab/diff/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace drivelab::diff {

Rng::Rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x9e3779b9u};
  engine_.seed(seq);
}

double Rng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % n);
}

Tensor Rng::normal_tensor(std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (auto& x : t.values()) x = normal();
  return t;
}

Rng Rng::split() {
  Rng child(0);
  const std::uint64_t a = engine_();
  const std::uint64_t b = engine_();
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  child.engine_.seed(seq);
  return child;
}

std::vector<std::uint64_t> Rng::state() const {
  std::stringstream ss;
  ss << engine_;
  std::vector<std::uint64_t> words;
  std::uint64_t w = 0;
  while (ss >> w) words.push_back(w);
  return words;
}

void Rng::set_state(const std::vector<std::uint64_t>& words) {
  std::stringstream ss;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) ss << ' ';
    ss << words[i];
  }
  ss >> engine_;
  if (ss.fail()) throw std::invalid_argument("Rng::set_state: malformed engine state");
}

}  // namespace drivelab::diff
