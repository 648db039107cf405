// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace melmark {

// Error categories surfaced by the CLI as "error[<name>]: <message>".
enum class Errc {
  io,            // file unreadable/unwritable
  format,        // malformed container/file contents
  unsupported,   // recognized but not handled (codec, dtype, version)
  size,          // shape/length mismatch
  parameter,     // out-of-range or inconsistent parameter
  index,         // bad index (timestep, class id, ...)
  task,          // watermark task misconfiguration
  metric_prereq, // metric preconditions not met (degenerate inputs, weak classifier)
  numeric,       // NaN/divergence guards
  usage,         // bad CLI invocation
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::unsupported: return "unsupported";
    case Errc::size: return "size";
    case Errc::parameter: return "parameter";
    case Errc::index: return "index";
    case Errc::task: return "task";
    case Errc::metric_prereq: return "metric-prereq";
    case Errc::numeric: return "numeric";
    case Errc::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc c, const std::string& msg) { throw Error(c, msg); }

inline void require(bool ok, Errc c, const std::string& msg) {
  if (!ok) raise(c, msg);
}

}  // namespace melmark
