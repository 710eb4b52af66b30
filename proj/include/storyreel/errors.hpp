#pragma once

#include <stdexcept>
#include <string>

namespace storyreel {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed persisted document. `field()` names the offending JSON path.
class SchemaError : public Error {
public:
    SchemaError(std::string field, std::string detail)
        : Error("schema error at '" + (field.empty() ? std::string("<root>") : field) + "': " + detail), field_(std::move(field)), detail_(std::move(detail)) {}

    /// Same error re-rooted under an enclosing field.
    SchemaError under(const std::string& parent) const {
        if (parent.empty()) {
            return *this;
        }
        return SchemaError(field_.empty() ? parent : parent + "." + field_, detail_);
    }

    const std::string& field() const noexcept { return field_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string field_;
    std::string detail_;
};

}  // namespace storyreel
