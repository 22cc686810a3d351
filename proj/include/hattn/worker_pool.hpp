#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace hattn {

// Fixed pool of worker threads. With zero threads every submitted job runs
// inline on the submitting thread, which gives the same results.
class WorkerPool {
public:
    class TaskGroup {
    public:
        TaskGroup() = default;
        // Blocks until every job of the group finished; rethrows the first
        // exception raised by a job.
        void wait();
        bool valid() const { return state_ != nullptr; }

    private:
        friend class WorkerPool;
        struct State {
            std::mutex mutex;
            std::condition_variable done;
            std::size_t remaining = 0;
            std::exception_ptr error;
        };
        std::shared_ptr<State> state_;
    };

    explicit WorkerPool(std::size_t threads);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    std::size_t thread_count() const { return workers_.size(); }

    // Schedules fn(0) ... fn(n - 1).
    TaskGroup submit(std::size_t n, std::function<void(std::size_t)> fn);

private:
    void worker_loop();

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::deque<std::function<void()>> queue_;
    bool stopping_ = false;
};

}  // namespace hattn
