#pragma once

#include <stdexcept>
#include <string>

namespace brw {

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The particle population outgrew the configured hard cap.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(int generation, std::size_t population, std::size_t cap)
      : std::runtime_error("particle cap " + std::to_string(cap) + " exceeded at generation " +
                           std::to_string(generation) + " (population " +
                           std::to_string(population) + ")"),
        generation_(generation),
        population_(population) {}

  int generation() const noexcept { return generation_; }
  std::size_t population() const noexcept { return population_; }

 private:
  int generation_;
  std::size_t population_;
};

/// A runtime self-check failed (e.g. a rejection envelope was violated).
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Experiment configuration is invalid; `path()` names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace brw
