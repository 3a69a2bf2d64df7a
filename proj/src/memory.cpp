#include "replay/memory.hpp"

#include <algorithm>
#include <numeric>

#include "replay/error.hpp"

namespace replay {

std::string to_string(StoragePolicy policy) {
  switch (policy) {
    case StoragePolicy::reservoir: return "reservoir";
    case StoragePolicy::crs_s1: return "crs_s1";
    case StoragePolicy::crs_s2: return "crs_s2";
  }
  return "unknown";
}

StoragePolicy parse_storage_policy(const std::string& name) {
  if (name == "reservoir") return StoragePolicy::reservoir;
  if (name == "crs_s1" || name == "s1") return StoragePolicy::crs_s1;
  if (name == "crs_s2" || name == "s2") return StoragePolicy::crs_s2;
  throw InvalidInput("unknown storage policy '" + name + "'");
}

std::int64_t MemorySlot::age(std::int64_t current_step) const {
  return std::max<std::int64_t>(1, current_step - insert_step);
}

double score(const MemorySlot& slot, std::int64_t current_step, double c) {
  const double ex = static_cast<double>(slot.select_count) /
                    static_cast<double>(slot.age(current_step));
  return ex + c * slot.mi;
}

void update_mi(MemorySlot& slot, double m_before, double m_after) {
  auto in_range = [](double m) { return m >= -1.0 && m <= 1.0; };
  if (!in_range(m_before) || !in_range(m_after)) {
    throw InvalidInput("update_mi: margins must lie in [-1, 1]");
  }
  slot.mi = m_after - m_before;
}

Buffer::Buffer(std::size_t capacity, StoragePolicy policy, double c)
    : capacity_(capacity), policy_(policy), c_(c) {
  if (capacity == 0) throw InvalidInput("buffer capacity must be positive");
  slots_.reserve(capacity);
}

std::vector<double> Buffer::scores() const {
  std::vector<double> out;
  out.reserve(slots_.size());
  for (const auto& s : slots_) out.push_back(score(s, seen_, c_));
  return out;
}

std::optional<std::size_t> Buffer::offer(Example ex, Rng& rng, double mi) {
  if (policy_ == StoragePolicy::reservoir) return offer_reservoir(*this, std::move(ex), rng, mi);
  // Scores are only consulted once the buffer is full.
  const auto s = slots_.size() < capacity_ ? std::vector<double>{} : scores();
  return offer_crs(*this, std::move(ex), s, rng, mi);
}

bool Buffer::admit(Rng& rng) {
  // The t-th item (t = seen_) survives with probability capacity / t.
  return rng.index(static_cast<std::uint64_t>(seen_)) < capacity_;
}

void Buffer::append(Example ex, double mi) {
  slots_.push_back(MemorySlot{std::move(ex), seen_, 0, mi});
}

void Buffer::replace(std::size_t index, Example ex, double mi) {
  slots_[index] = MemorySlot{std::move(ex), seen_, 0, mi};
}

std::vector<std::size_t> Buffer::draw(std::size_t k, Rng& rng) const {
  const std::size_t n = slots_.size();
  const std::size_t take = std::min(k, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

void Buffer::mark_selected(std::span<const std::size_t> indices) {
  for (auto i : indices) ++slots_.at(i).select_count;
}

std::vector<std::size_t> Buffer::sample_batch(std::size_t k, Rng& rng) {
  auto idx = draw(k, rng);
  mark_selected(idx);
  return idx;
}

nlohmann::json Buffer::snapshot() const {
  auto out = nlohmann::json::array();
  for (const auto& s : slots_) {
    out.push_back({{"id", s.example.id},
                   {"insert_step", s.insert_step},
                   {"n", s.select_count},
                   {"mi", s.mi}});
  }
  return out;
}

std::optional<std::size_t> offer_reservoir(Buffer& buf, Example ex, Rng& rng, double mi) {
  ++buf.seen_;
  if (buf.slots_.size() < buf.capacity_) {
    buf.append(std::move(ex), mi);
    return std::nullopt;
  }
  const auto i = rng.index(static_cast<std::uint64_t>(buf.seen_));
  if (i >= buf.capacity_) return std::nullopt;
  buf.replace(static_cast<std::size_t>(i), std::move(ex), mi);
  return static_cast<std::size_t>(i);
}

std::optional<std::size_t> offer_crs(Buffer& buf, Example ex, std::span<const double> scores,
                                     Rng& rng, double mi) {
  ++buf.seen_;
  if (buf.slots_.size() < buf.capacity_) {
    buf.append(std::move(ex), mi);
    return std::nullopt;
  }
  if (scores.size() != buf.slots_.size()) {
    throw InvalidInput("offer_crs: need one score per slot");
  }
  if (!buf.admit(rng)) return std::nullopt;
  const std::size_t victim = buf.policy_ == StoragePolicy::crs_s2
                                 ? sample_proportional(scores, rng)
                                 : argmax_score(scores);
  buf.replace(victim, std::move(ex), mi);
  return victim;
}

std::size_t argmax_score(std::span<const double> scores) {
  if (scores.empty()) throw InvalidInput("argmax_score: no scores");
  // max_element returns the first maximum, so ties go to the lowest index.
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                  scores.begin());
}

std::size_t sample_proportional(std::span<const double> scores, Rng& rng) {
  if (scores.empty()) throw InvalidInput("sample_proportional: no scores");
  const double lowest = *std::min_element(scores.begin(), scores.end());
  const double shift = -std::min(0.0, lowest);
  double total = 0.0;
  for (double s : scores) total += s + shift;
  if (!(total > 0.0)) return static_cast<std::size_t>(rng.index(scores.size()));

  const double target = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    acc += scores[j] + shift;
    if (target < acc) return j;
  }
  // Rounding can leave target == total; pick the last positive-weight slot.
  for (std::size_t j = scores.size(); j-- > 0;) {
    if (scores[j] + shift > 0.0) return j;
  }
  return scores.size() - 1;
}

}  // namespace replay
