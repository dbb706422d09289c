#pragma once

// Multirate fusion of the PSOG stream (fast) with the VOG shift stream (slow).
//
// Per PSOG sample: moving average of the raw outputs, zero-order hold of the
// latest shift estimate, moving average of the held shift, optional gate, then
// inverse calibration with the shift as sensor position.

#include <cmath>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "psv/calib.hpp"
#include "psv/common.hpp"
#include "psv/psog.hpp"
#include "psv/vog.hpp"

namespace psv {

struct StreamConfig {
  double f_psog = 1000.0;  // Hz
  double f_vog = 5.0;      // Hz
  std::size_t ma_window = 3;
  double shift_gate_mm = 0.0;  // |shift| below this is treated as zero
  bool smooth_psog = true;
  bool smooth_shift = true;

  void validate() const {
    if (!(f_psog > 0 && f_vog > 0)) throw InvalidArgument("stream rates must be positive");
    const double r = f_psog / f_vog;
    if (std::abs(r - std::round(r)) > 1e-9 || r < 1.0)
      throw InvalidArgument("f_psog must be an integer multiple of f_vog");
    if (ma_window < 1) throw InvalidArgument("ma_window must be at least 1");
    if (!(shift_gate_mm >= 0)) throw InvalidArgument("shift_gate_mm must be non-negative");
  }

  std::size_t ratio() const { return static_cast<std::size_t>(std::llround(f_psog / f_vog)); }
};

/// Causal moving average over the current and previous n-1 samples. Until n
/// samples have arrived the available prefix is averaged.
class MovingAverage {
 public:
  explicit MovingAverage(std::size_t n) : ring_(n), n_(n) {
    if (n == 0) throw InvalidArgument("moving average window must be at least 1");
  }

  double push(double x) {
    head_ = (head_ + 1) % n_;
    ring_[head_] = x;
    if (count_ < n_) ++count_;
    // Newest first, the same order as the textbook sum.
    double sum = 0.0;
    for (std::size_t j = 0; j < count_; ++j) sum += ring_[(head_ + n_ - j) % n_];
    return sum / static_cast<double>(count_);
  }

  void reset() { count_ = 0; }

 private:
  std::vector<double> ring_;
  std::size_t n_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
};

inline std::vector<double> moving_average(std::span<const double> x, std::size_t n) {
  MovingAverage ma(n);
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x) out.push_back(ma.push(v));
  return out;
}

template <class T>
struct Held {
  T value;
  bool stale = false;  // past the interval the source sample nominally covers
};

/// Zero-order hold: low-rate sample k fills output indices
/// [k * ratio, (k + 1) * ratio). Indices past the last covered one repeat the
/// last sample and are flagged stale.
template <class T>
std::vector<Held<T>> zoh_upsample(std::span<const T> low, std::size_t ratio, std::size_t n_out) {
  if (ratio == 0) throw InvalidArgument("upsampling ratio must be at least 1");
  if (low.empty() && n_out > 0) throw InvalidArgument("cannot hold an empty stream");
  std::vector<Held<T>> out;
  out.reserve(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const std::size_t k = i / ratio;
    if (k < low.size())
      out.push_back({low[k], false});
    else
      out.push_back({low.back(), true});
  }
  return out;
}

template <class T>
std::vector<Held<T>> zoh_upsample(std::span<const T> low, double f_low, double f_high, std::size_t n_out) {
  StreamConfig rates;
  rates.f_vog = f_low;
  rates.f_psog = f_high;
  rates.validate();
  return zoh_upsample(low, rates.ratio(), n_out);
}

struct GazeFlags {
  bool extrapolated = false;  // inversion fell outside the calibrated eye range
  bool stale_shift = false;   // the applied shift is older than one VOG period

  int bits() const { return (extrapolated ? 1 : 0) | (stale_shift ? 2 : 0); }
};

struct GazeSample {
  double t = 0.0;
  double gaze_h = 0.0;  // deg
  double gaze_v = 0.0;  // deg
  PerAxis<double> shift_applied;  // mm
  GazeFlags flags;

  double along(Axis axis) const { return axis == Axis::Horizontal ? gaze_h : gaze_v; }
};

/// Single-owner correction state machine with O(ma_window) state.
class CorrectionEngine {
 public:
  CorrectionEngine(CalibModel model, StreamConfig cfg)
      : model_(std::move(model)),
        cfg_(cfg),
        ma_raw_{MovingAverage(cfg.ma_window), MovingAverage(cfg.ma_window)},
        ma_shift_{MovingAverage(cfg.ma_window), MovingAverage(cfg.ma_window)} {
    cfg_.validate();
  }

  /// Latest VOG estimate; it is held until the next one arrives.
  void push_shift(const ShiftEstimate& s) {
    held_ = s;
    since_shift_ = 0;
  }

  GazeSample push_psog(const PsogSample& sample) {
    GazeSample out;
    out.t = sample.t;
    const bool have_shift = held_.has_value();
    out.flags.stale_shift = !have_shift || since_shift_ >= cfg_.ratio() || held_->stale;
    ++since_shift_;
    for (Axis axis : kAxes) {
      const double raw = cfg_.smooth_psog ? ma_raw_[axis].push(sample.along(axis)) : sample.along(axis);
      const double held = have_shift ? held_->along(axis) : 0.0;
      double shift = cfg_.smooth_shift ? ma_shift_[axis].push(held) : held;
      if (std::abs(shift) < cfg_.shift_gate_mm) shift = 0.0;
      const Inversion inv = invert(model_, raw, shift, axis);
      (axis == Axis::Horizontal ? out.gaze_h : out.gaze_v) = inv.eye_deg;
      out.shift_applied[axis] = shift;
      out.flags.extrapolated = out.flags.extrapolated || inv.out_of_range;
    }
    return out;
  }

  const StreamConfig& config() const { return cfg_; }

 private:
  CalibModel model_;
  StreamConfig cfg_;
  PerAxis<MovingAverage> ma_raw_;
  PerAxis<MovingAverage> ma_shift_;
  std::optional<ShiftEstimate> held_;
  std::size_t since_shift_ = 0;
};

/// Batch correction of time-aligned streams: shift sample k is delivered
/// before PSOG sample k * ratio.
inline std::vector<GazeSample> correct(std::span<const PsogSample> psog, std::span<const ShiftEstimate> shifts,
                                       const CalibModel& model, const StreamConfig& cfg) {
  CorrectionEngine engine(model, cfg);
  const std::size_t ratio = engine.config().ratio();
  std::vector<GazeSample> out;
  out.reserve(psog.size());
  for (std::size_t i = 0; i < psog.size(); ++i) {
    if (i % ratio == 0 && i / ratio < shifts.size()) engine.push_shift(shifts[i / ratio]);
    out.push_back(engine.push_psog(psog[i]));
  }
  return out;
}

/// Blocking FIFO with a capacity bound; close() ends the stream.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
  }

  /// nullopt once the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_empty_, not_full_;
};

/// Consumes both queues and emits gaze samples in PSOG order. A shift estimate
/// is applied to every PSOG sample at or after its timestamp.
template <class Sink>
void run_engine(CorrectionEngine& engine, BoundedQueue<PsogSample>& psog, BoundedQueue<ShiftEstimate>& shifts,
                Sink&& sink) {
  const double half_period = 0.5 / engine.config().f_psog;
  std::optional<ShiftEstimate> pending;
  bool shifts_open = true;
  while (auto sample = psog.pop()) {
    for (;;) {
      if (!pending && shifts_open) {
        pending = shifts.pop();
        if (!pending) shifts_open = false;
      }
      if (!pending || pending->t > sample->t + half_period) break;
      engine.push_shift(*pending);
      pending.reset();
    }
    sink(engine.push_psog(*sample));
  }
}

inline constexpr const char* kGazeCsvHeader = "t,gaze_h_deg,gaze_v_deg,shift_h_mm,shift_v_mm,flags";

inline void write_csv_row(std::ostream& out, const GazeSample& g) {
  out << g.t << ',' << g.gaze_h << ',' << g.gaze_v << ',' << g.shift_applied.h << ',' << g.shift_applied.v << ','
      << g.flags.bits() << '\n';
}

}  // namespace psv
