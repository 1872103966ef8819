#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ebt::memtrack {

// Scalar-count accounting for tensor values retained during a tracked
// region. Counts are allocator-independent and deterministic: identical
// runs produce identical peaks. All state is thread-local; a tape and its
// tensors are confined to one thread anyway.

struct MemStats {
  int64_t live_scalars = 0;
  int64_t peak_scalars = 0;
  std::unordered_map<std::string, int64_t> per_op;
};

bool enabled();
void set_enabled(bool on);

// Called by the tensor engine on value-buffer alloc/free.
void on_alloc(int64_t scalars);
void on_free(int64_t scalars);

int64_t live();

// Runs `fn` inside a tracked region and returns the stats delta observed
// within it (peak relative to the live count at entry). Regions nest; an
// outer region's peak is at least any inner region's peak.
MemStats track(const std::string& label, const std::function<void()>& fn);

}  // namespace ebt::memtrack
