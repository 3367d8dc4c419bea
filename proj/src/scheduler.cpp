#include "claa/scheduler.hpp"

#include <cmath>
#include <stdexcept>

namespace claa {

std::int64_t Scheduler::to_ticks(SimTime t) { return std::llround(t * 1e6); }

Scheduler::EventId Scheduler::schedule_at(SimTime t, Action action) {
    const std::int64_t ticks = to_ticks(t);
    if (ticks < now_) throw std::logic_error("event scheduled in the past");
    const EventId id = next_seq_++;
    queue_.emplace(Key{ticks, id}, std::move(action));
    index_.emplace(id, ticks);
    return id;
}

void Scheduler::cancel(EventId id) {
    auto it = index_.find(id);
    if (it == index_.end()) return;
    queue_.erase(Key{it->second, id});
    index_.erase(it);
}

bool Scheduler::step() {
    if (queue_.empty()) return false;
    auto node = queue_.extract(queue_.begin());
    index_.erase(node.key().second);
    now_ = node.key().first;
    ++executed_;
    node.mapped()();
    return true;
}

void Scheduler::run_until(SimTime end) {
    const std::int64_t limit = to_ticks(end);
    while (!queue_.empty() && queue_.begin()->first.first <= limit) step();
    if (limit > now_) now_ = limit;
}

void Timer::arm_at(SimTime t, Scheduler::Action action) {
    cancel();
    expiry_ = Scheduler::quantize(t);
    id_ = sched_->schedule_at(t, std::move(action));
}

void Timer::cancel() {
    if (id_ != 0) sched_->cancel(id_);
    id_ = 0;
}

}  // namespace claa
