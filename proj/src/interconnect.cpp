#include "layersim/interconnect.hpp"

#include <algorithm>
#include <cmath>

namespace layersim {

namespace {

constexpr double kSnapEps = 1e-9;  // below this the recheck snaps to the window end

bool contends(const HardwareSpec& hw) { return hw.n_gpus > 1 && !hw.nvlink; }

}  // namespace

const PcieBus::Interval* PcieBus::window_containing(double t) const {
  for (const auto& w : windows_) {
    if (w.begin <= t && t < w.end) return &w;
    if (w.begin > t) break;
  }
  return nullptr;
}

void PcieBus::insert_window(double begin, double end) {
  if (end <= begin) return;
  double dur = end - begin;
  // Windows yield to committed chunks: a DMA burst in the way drains first,
  // so the whole window shifts past it. Single ascending pass suffices since
  // begin only moves forward.
  for (const auto& c : chunks_) {
    if (c.end <= begin) continue;
    if (c.begin >= begin + dur) break;
    begin = c.end;
  }
  end = begin + dur;
  auto it = windows_.begin();
  while (it != windows_.end()) {
    if (it->end < begin) {
      ++it;
      continue;
    }
    if (it->begin > end) break;
    begin = std::min(begin, it->begin);
    end = std::max(end, it->end);
    it = windows_.erase(it);
  }
  windows_.insert(it, {begin, end});
}

void PcieBus::prune(double before) {
  if (keep_history_) return;  // tests inspect the full timeline
  auto dead = [before](const Interval& iv) { return iv.end <= before; };
  chunks_.erase(std::remove_if(chunks_.begin(), chunks_.end(), dead), chunks_.end());
  windows_.erase(std::remove_if(windows_.begin(), windows_.end(), dead), windows_.end());
}

void PcieBus::register_allreduce(double start, double duration, const HardwareSpec& hw) {
  if (!contends(hw) || duration <= 0.0) return;
  prune(std::min(start, busy_until_));
  insert_window(start, start + duration);
}

double PcieBus::allreduce_busy_until() const {
  return windows_.empty() ? 0.0 : windows_.back().end;
}

std::vector<PcieBus::Span> PcieBus::allreduce_windows() const {
  std::vector<Span> out;
  out.reserve(windows_.size());
  for (const auto& w : windows_) out.push_back({w.begin, w.end, true});
  return out;
}

bool PcieBus::allreduce_active(double t) const { return window_containing(t) != nullptr; }

TransferSchedule PcieBus::submit_transfer(const TransferJob& job, const HardwareSpec& hw) {
  TransferSchedule sched;
  sched.start = job.submit_time;
  sched.completion = job.submit_time;
  if (job.bytes <= 0.0) return sched;

  prune(std::min(job.submit_time, busy_until_));
  double t = std::max(job.submit_time, busy_until_);
  double remaining_bytes = job.bytes;
  bool first = true;
  while (remaining_bytes > 0.0) {
    double chunk = std::min(remaining_bytes, job.chunk_bytes);
    // Check-and-delay: never start a chunk during an active all-reduce.
    while (const Interval* w = window_containing(t)) {
      double end = w->end;
      while (t < end) {
        double left = end - t;
        if (left <= kSnapEps) {
          t = end;
          break;
        }
        t += delta_ * left;
        ++sched.deferrals;
      }
    }
    double dur = chunk / hw.pcie_bandwidth;
    double chunk_end = t + dur;
    if (first) {
      sched.start = t;
      first = false;
    }
    if (!chunks_.empty() && chunks_.back().end == t) {
      chunks_.back().end = chunk_end;  // extend the contiguous busy run
    } else {
      chunks_.push_back({t, chunk_end});
    }
    if (keep_history_) history_.push_back({t, chunk_end, false});
    // All-reduces that would have begun mid-chunk wait for the chunk tail;
    // re-inserting applies the yield-to-chunk shift.
    std::vector<Interval> displaced;
    for (std::size_t i = 0; i < windows_.size();) {
      if (windows_[i].begin > t && windows_[i].begin < chunk_end) {
        displaced.push_back(windows_[i]);
        windows_.erase(windows_.begin() + i);
      } else {
        ++i;
      }
    }
    for (const auto& w : displaced) insert_window(w.begin, w.end);
    t = chunk_end;
    remaining_bytes -= chunk;
    ++sched.chunks;
  }
  busy_until_ = t;
  sched.completion = t;
  if (log_) {
    log_->push_back({job.submit_time, sched.start, sched.completion, job.bytes,
                     job.direction, sched.deferrals});
  }
  return sched;
}

}  // namespace layersim
