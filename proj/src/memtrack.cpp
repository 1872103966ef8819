#include "ebt/memtrack.hpp"

#include <algorithm>

namespace ebt::memtrack {

namespace {

struct Frame {
  std::string label;
  int64_t base = 0;
  int64_t max_live = 0;
};

thread_local bool g_enabled = false;
thread_local int64_t g_live = 0;
thread_local std::vector<Frame> g_frames;

}  // namespace

bool enabled() { return g_enabled; }
void set_enabled(bool on) { g_enabled = on; }

void on_alloc(int64_t scalars) {
  if (!g_enabled) return;
  g_live += scalars;
  for (auto& f : g_frames) f.max_live = std::max(f.max_live, g_live);
}

void on_free(int64_t scalars) {
  if (!g_enabled) return;
  g_live -= scalars;
}

int64_t live() { return g_live; }

MemStats track(const std::string& label, const std::function<void()>& fn) {
  bool was_enabled = g_enabled;
  g_enabled = true;
  g_frames.push_back(Frame{label, g_live, g_live});
  fn();
  Frame f = g_frames.back();
  g_frames.pop_back();
  g_enabled = was_enabled;
  MemStats out;
  out.live_scalars = g_live - f.base;
  out.peak_scalars = f.max_live - f.base;
  out.per_op[label] = out.peak_scalars;
  return out;
}

}  // namespace ebt::memtrack
