#include "tensorslice/schedule.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "tensorslice/error.hpp"

namespace tslice {

double ScheduleReport::max_job_ms() const {
  return job_ms.empty() ? 0.0 : *std::max_element(job_ms.begin(), job_ms.end());
}

ScheduleReport run_jobs(const std::vector<std::function<void()>>& jobs, std::size_t workers) {
  if (workers == 0) throw InvalidArgument("run_jobs: workers must be at least 1");
  using clock = std::chrono::steady_clock;
  ScheduleReport r;
  r.workers = workers;
  r.job_ms.assign(jobs.size(), 0.0);
  r.completed.assign(jobs.size(), false);
  std::vector<char> done(jobs.size(), 0);

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> cancelled{false};
  const auto start = clock::now();

  auto worker = [&]() {
    for (;;) {
      if (cancelled.load()) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      const auto t0 = clock::now();
      try {
        jobs[k]();
        done[k] = 1;
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (!r.failure) {
          r.failure = std::current_exception();
          r.failure_message = "job " + std::to_string(k) + ": " + e.what();
        }
        cancelled = true;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!r.failure) {
          r.failure = std::current_exception();
          r.failure_message = "job " + std::to_string(k) + ": unknown failure";
        }
        cancelled = true;
      }
      r.job_ms[k] = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const std::size_t n = std::min(workers, std::max<std::size_t>(jobs.size(), 1));
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  r.makespan_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    r.completed[k] = done[k] != 0;
    r.serial_ms += r.job_ms[k];
  }
  r.speedup = r.makespan_ms > 0.0 ? r.serial_ms / r.makespan_ms : 1.0;
  r.efficiency = r.speedup / static_cast<double>(workers);
  return r;
}

ScheduleReport run_jobs_or_throw(const std::vector<std::function<void()>>& jobs, std::size_t workers) {
  ScheduleReport r = run_jobs(jobs, workers);
  if (r.failure) std::rethrow_exception(r.failure);
  return r;
}

std::string timing_summary(const std::vector<ScheduleReport>& reports) {
  std::ostringstream os;
  os.precision(10);
  os << "workers,jobs,makespan_ms,serial_ms,max_job_ms,speedup,efficiency\n";
  for (const auto& r : reports)
    os << r.workers << ',' << r.job_ms.size() << ',' << r.makespan_ms << ',' << r.serial_ms << ',' << r.max_job_ms()
       << ',' << r.speedup << ',' << r.efficiency << '\n';
  return os.str();
}

void write_timing_summary(const std::vector<ScheduleReport>& reports, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << timing_summary(reports);
}

}  // namespace tslice
