#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pdselect {

/// Invalid input data: malformed files, schema violations, unknown ids.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A pipeline stage failed; carries the stage name and what was already
/// written before the abort.
class StageError : public DataError {
public:
    StageError(std::string stage, const std::string& msg,
               std::vector<std::string> partial_outputs)
        : DataError("stage '" + stage + "': " + msg),
          stage_(std::move(stage)),
          partial_outputs_(std::move(partial_outputs)) {}

    const std::string& stage() const { return stage_; }
    const std::vector<std::string>& partial_outputs() const { return partial_outputs_; }

private:
    std::string stage_;
    std::vector<std::string> partial_outputs_;
};

}  // namespace pdselect
