#include "hattn/worker_pool.hpp"

namespace hattn {

void WorkerPool::TaskGroup::wait() {
    if (!state_) {
        return;
    }
    std::unique_lock lock(state_->mutex);
    state_->done.wait(lock, [&] { return state_->remaining == 0; });
    if (state_->error) {
        auto err = state_->error;
        state_->error = nullptr;
        std::rethrow_exception(err);
    }
}

WorkerPool::WorkerPool(std::size_t threads) {
    workers_.reserve(threads);
    for (std::size_t i = 0; i < threads; ++i) {
        workers_.emplace_back([this] { worker_loop(); });
    }
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : workers_) {
        t.join();
    }
}

WorkerPool::TaskGroup WorkerPool::submit(std::size_t n, std::function<void(std::size_t)> fn) {
    TaskGroup group;
    group.state_ = std::make_shared<TaskGroup::State>();
    group.state_->remaining = n;
    auto state = group.state_;
    auto shared_fn = std::make_shared<std::function<void(std::size_t)>>(std::move(fn));

    auto run_one = [state, shared_fn](std::size_t i) {
        std::exception_ptr err;
        try {
            (*shared_fn)(i);
        } catch (...) {
            err = std::current_exception();
        }
        std::lock_guard lock(state->mutex);
        if (err && !state->error) {
            state->error = err;
        }
        if (--state->remaining == 0) {
            state->done.notify_all();
        }
    };

    if (workers_.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            run_one(i);
        }
        return group;
    }
    {
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < n; ++i) {
            queue_.emplace_back([run_one, i] { run_one(i); });
        }
    }
    wake_.notify_all();
    return group;
}

void WorkerPool::worker_loop() {
    for (;;) {
        std::function<void()> job;
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) {
                return;
            }
            job = std::move(queue_.front());
            queue_.pop_front();
        }
        job();
    }
}

}  // namespace hattn
