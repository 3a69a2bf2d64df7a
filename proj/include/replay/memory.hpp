#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "replay/mlp.hpp"
#include "replay/rng.hpp"

namespace replay {

enum class StoragePolicy { reservoir, crs_s1, crs_s2 };

std::string to_string(StoragePolicy policy);
StoragePolicy parse_storage_policy(const std::string& name);

struct MemorySlot {
  Example example;
  std::int64_t insert_step = 0;
  std::int64_t select_count = 0;  // times drawn into a replay batch
  double mi = 0.0;                // latest margin increment

  // Steps since insertion, floored at 1 so the exploitation rate stays finite.
  std::int64_t age(std::int64_t current_step) const;
};

// Replacement score: exploitation rate n / age plus c times the margin increment.
double score(const MemorySlot& slot, std::int64_t current_step, double c);

// Records m_after - m_before as the slot's margin increment. Margins must lie in [-1, 1].
void update_mi(MemorySlot& slot, double m_before, double m_after);

// Fixed-capacity episodic memory. Admission always follows the reservoir gate
// (the t-th item enters with probability capacity / t); the policy only decides
// which slot is evicted.
class Buffer {
 public:
  Buffer(std::size_t capacity, StoragePolicy policy, double c = 1.0);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::int64_t seen() const { return seen_; }
  StoragePolicy policy() const { return policy_; }
  double c() const { return c_; }

  const std::vector<MemorySlot>& slots() const { return slots_; }
  const MemorySlot& slot(std::size_t i) const { return slots_.at(i); }
  MemorySlot& slot(std::size_t i) { return slots_.at(i); }

  // score() of every slot at the current step.
  std::vector<double> scores() const;

  // Offers one stream item under the buffer's policy. Returns the replaced
  // slot index, or nothing when the item was appended or discarded.
  std::optional<std::size_t> offer(Example ex, Rng& rng, double mi = 0.0);

  // min(k, size) distinct slot indices, uniformly, without bookkeeping.
  std::vector<std::size_t> draw(std::size_t k, Rng& rng) const;

  // Counts one replay selection for each index.
  void mark_selected(std::span<const std::size_t> indices);

  // draw() followed by mark_selected().
  std::vector<std::size_t> sample_batch(std::size_t k, Rng& rng);

  // Array of {id, insert_step, n, mi}.
  nlohmann::json snapshot() const;

 private:
  friend std::optional<std::size_t> offer_reservoir(Buffer&, Example, Rng&, double);
  friend std::optional<std::size_t> offer_crs(Buffer&, Example, std::span<const double>, Rng&,
                                              double);

  // Shared reservoir gate; returns true when the (already counted) item is admitted to a full buffer.
  bool admit(Rng& rng);
  void append(Example ex, double mi);
  void replace(std::size_t index, Example ex, double mi);

  std::size_t capacity_;
  StoragePolicy policy_;
  double c_;
  std::int64_t seen_ = 0;
  std::vector<MemorySlot> slots_;
};

// Classic reservoir sampling: uniform victim.
std::optional<std::size_t> offer_reservoir(Buffer& buf, Example ex, Rng& rng, double mi = 0.0);

// Confidence reservoir sampling: reservoir gate, score-driven victim.
// s1 evicts the highest score (lowest index on ties); s2 samples the victim
// proportionally to the scores shifted to be non-negative.
std::optional<std::size_t> offer_crs(Buffer& buf, Example ex, std::span<const double> scores,
                                     Rng& rng, double mi = 0.0);

// Victim choice of the s2 rule, exposed for frequency testing.
std::size_t sample_proportional(std::span<const double> scores, Rng& rng);

// Victim choice of the s1 rule.
std::size_t argmax_score(std::span<const double> scores);

}  // namespace replay
