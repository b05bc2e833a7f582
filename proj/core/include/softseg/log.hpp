#pragma once

#include <functional>
#include <string>

namespace softseg {

using WarningHandler = std::function<void(const std::string&)>;

/// Installs a process-wide warning sink; returns the previous one. The
/// default writes "warning: <msg>" to stderr.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace softseg
