#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <unordered_map>
#include <utility>

namespace claa {

using SimTime = double;

// Discrete-event queue. Times are quantized to whole microseconds; events at
// the same instant run in insertion order.
class Scheduler {
public:
    using Action = std::function<void()>;
    using EventId = std::uint64_t;

    static std::int64_t to_ticks(SimTime t);
    static SimTime from_ticks(std::int64_t ticks) { return static_cast<double>(ticks) * 1e-6; }
    static SimTime quantize(SimTime t) { return from_ticks(to_ticks(t)); }

    SimTime now() const { return from_ticks(now_); }

    // Throws std::logic_error when `t` lies before now().
    EventId schedule_at(SimTime t, Action action);
    EventId schedule_in(double delay, Action action) { return schedule_at(now() + delay, std::move(action)); }

    // Cancelling an executed or unknown event is a no-op.
    void cancel(EventId id);
    bool pending(EventId id) const { return index_.contains(id); }

    // Runs every event with time <= end, then advances the clock to end.
    void run_until(SimTime end);
    bool step();

    std::size_t executed() const { return executed_; }
    std::size_t queued() const { return queue_.size(); }

private:
    using Key = std::pair<std::int64_t, std::uint64_t>;

    std::map<Key, Action> queue_;
    std::unordered_map<EventId, std::int64_t> index_;
    std::int64_t now_ = 0;
    std::uint64_t next_seq_ = 1;
    std::size_t executed_ = 0;
};

// Cancels its event on destruction or re-arm. For per-object timers.
class Timer {
public:
    explicit Timer(Scheduler& s) : sched_(&s) {}
    Timer(const Timer&) = delete;
    Timer& operator=(const Timer&) = delete;
    ~Timer() { cancel(); }

    void arm_at(SimTime t, Scheduler::Action action);
    void arm_in(double delay, Scheduler::Action action) { arm_at(sched_->now() + delay, std::move(action)); }
    void cancel();
    bool armed() const { return id_ != 0 && sched_->pending(id_); }
    SimTime expiry() const { return expiry_; }

private:
    Scheduler* sched_;
    Scheduler::EventId id_ = 0;
    SimTime expiry_ = 0.0;
};

}  // namespace claa
