#pragma once

#include <exception>
#include <mutex>

namespace chainmeld {

/// Exceptions must not escape an OpenMP region. Wrap loop bodies with run()
/// and call rethrow() after the region.
class FirstException {
 public:
  template <class F>
  void run(F&& body) noexcept {
    try {
      body();
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) error_ = std::current_exception();
    }
  }

  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mutex_;
  std::exception_ptr error_;
};

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace chainmeld
