#ifndef ASSIST_SERVICE_EVENT_LOG_HPP_
#define ASSIST_SERVICE_EVENT_LOG_HPP_

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"
#include "assist/core/image.hpp"

namespace assist::service {

struct Event {
  std::uint64_t sequence = 0;
  std::string timestamp;
  std::string type;
  nlohmann::json payload;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Event, sequence, timestamp, type, payload)

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const auto n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms.count()));
  return buf;
}

// Reads a JSON-lines log. A final line without a newline is a torn write
// from a crash and is dropped; any other malformed line is an error.
inline std::vector<Event> read_events(const std::filesystem::path& path,
                                      std::uint64_t* valid_bytes = nullptr) {
  std::vector<Event> out;
  if (valid_bytes) *valid_bytes = 0;
  if (!std::filesystem::exists(path)) return out;
  const std::string text = read_text(path);
  std::size_t pos = 0;
  std::uint64_t last = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    if (!line.empty()) {
      Event e;
      try {
        e = nlohmann::json::parse(line).get<Event>();
      } catch (const nlohmann::json::exception& ex) {
        throw FormatError("corrupt event log line at byte " + std::to_string(pos) + ": " + ex.what());
      }
      if (e.sequence <= last)
        throw FormatError("event log sequence numbers are not strictly increasing at " +
                          std::to_string(e.sequence));
      last = e.sequence;
      out.push_back(std::move(e));
    }
    pos = nl + 1;
    if (valid_bytes) *valid_bytes = pos;
  }
  return out;
}

// Append-only, single-writer log; each append is flushed to disk before it
// returns.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::uint64_t valid = 0;
    replayed_ = read_events(path_, &valid);
    if (std::filesystem::exists(path_) && std::filesystem::file_size(path_) > valid)
      std::filesystem::resize_file(path_, valid);
    next_ = replayed_.empty() ? 1 : replayed_.back().sequence + 1;
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open event log " + path_.string() + ": " + std::strerror(errno));
  }
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;
  ~EventLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  // Events present when the log was opened.
  const std::vector<Event>& replayed() const { return replayed_; }

  std::uint64_t next_sequence() const {
    std::lock_guard lock(mu_);
    return next_;
  }

  std::uint64_t count() const {
    std::lock_guard lock(mu_);
    return next_ - 1;
  }

  Event append(const std::string& type, nlohmann::json payload) {
    std::lock_guard lock(mu_);
    Event e{next_, utc_now(), type, std::move(payload)};
    const std::string line = nlohmann::json(e).dump() + "\n";
    std::size_t done = 0;
    while (done < line.size()) {
      const auto n = ::write(fd_, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("event log write failed: " + std::string(std::strerror(errno)));
      }
      done += static_cast<std::size_t>(n);
    }
    if (::fdatasync(fd_) != 0) throw IoError("event log sync failed: " + std::string(std::strerror(errno)));
    ++next_;
    return e;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<Event> replayed_;
  std::uint64_t next_ = 1;
  int fd_ = -1;
  mutable std::mutex mu_;
};

}  // namespace assist::service

#endif  // ASSIST_SERVICE_EVENT_LOG_HPP_
