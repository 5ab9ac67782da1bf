#pragma once

#include <cstddef>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace tslice {

struct ScheduleReport {
  std::size_t workers = 1;
  std::vector<double> job_ms;      // 0 for jobs that never ran
  std::vector<bool> completed;
  double makespan_ms = 0.0;
  double serial_ms = 0.0;          // sum of job_ms
  double speedup = 0.0;            // serial / makespan
  double efficiency = 0.0;         // speedup / workers
  std::exception_ptr failure;      // first job failure, if any
  std::string failure_message;

  bool ok() const { return !failure; }
  double max_job_ms() const;
};

// Runs independent jobs on a fixed pool of `workers` threads (workers == 1
// runs them inline, in order). The first failure stops hand-out of further
// jobs; jobs already running finish. The report records what completed.
ScheduleReport run_jobs(const std::vector<std::function<void()>>& jobs, std::size_t workers);

// Same, rethrowing the first failure after all started jobs have finished.
ScheduleReport run_jobs_or_throw(const std::vector<std::function<void()>>& jobs, std::size_t workers);

// CSV: workers,jobs,makespan_ms,serial_ms,max_job_ms,speedup,efficiency
std::string timing_summary(const std::vector<ScheduleReport>& reports);
void write_timing_summary(const std::vector<ScheduleReport>& reports, const std::filesystem::path& path);

}  // namespace tslice
