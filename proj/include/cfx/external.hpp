#pragma once

// Bring-your-own black box: a subprocess speaking a line protocol.
//
// Request: one CSV line per instance (schema order, categories by name), then a
// blank line. Reply: one class name per line, same count, then a blank line.

#include <csignal>
#include <cstdio>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "cfx/csv.hpp"
#include "cfx/errors.hpp"
#include "cfx/predictor.hpp"
#include "cfx/schema.hpp"

namespace cfx {

class ExternalPredictor final : public Predictor {
 public:
  static constexpr std::size_t kChunk = 256;

  ExternalPredictor(const std::string& command, Schema schema, std::vector<std::string> class_names)
      : schema_(std::move(schema)), class_names_(std::move(class_names)) {
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw ProcessError("external predictor: pipe failed");
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw ProcessError("external predictor: pipe failed");
    }
    pid_ = fork();
    if (pid_ < 0) throw ProcessError("external predictor: fork failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    out_ = fdopen(to_child[1], "w");
    in_ = fdopen(from_child[0], "r");
    if (!out_ || !in_) throw ProcessError("external predictor: fdopen failed");
  }

  ExternalPredictor(const ExternalPredictor&) = delete;
  ExternalPredictor& operator=(const ExternalPredictor&) = delete;

  ~ExternalPredictor() override {
    if (out_) std::fclose(out_);
    if (in_) std::fclose(in_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  std::vector<int> predict_batch(std::span<const Instance> batch) const override {
    std::lock_guard lock(mutex_);
    std::vector<int> out;
    out.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); b += kChunk) {
      const auto part = batch.subspan(b, std::min(kChunk, batch.size() - b));
      send(part);
      receive(part.size(), out);
    }
    return out;
  }

 private:
  void send(std::span<const Instance> part) const {
    std::ostringstream msg;
    for (const auto& z : part) csv::write_row(msg, format_instance(schema_, z));
    msg << '\n';
    const std::string s = msg.str();
    if (std::fwrite(s.data(), 1, s.size(), out_) != s.size() || std::fflush(out_) != 0)
      throw ProcessError("external predictor: cannot write to subprocess");
  }

  bool read_line(std::string& line) const {
    line.clear();
    int c = 0;
    while ((c = std::fgetc(in_)) != EOF) {
      if (c == '\n') break;
      line.push_back(static_cast<char>(c));
    }
    if (c == EOF && line.empty()) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  void receive(std::size_t expected, std::vector<int>& out) const {
    std::string line;
    std::size_t got = 0;
    for (;;) {
      if (!read_line(line))
        throw ProtocolError("external predictor: reply ended after " + std::to_string(got) + " of " +
                            std::to_string(expected) + " labels");
      if (line.empty()) break;
      if (got == expected) throw ProtocolError("external predictor: more labels than instances");
      auto it = std::find(class_names_.begin(), class_names_.end(), line);
      if (it == class_names_.end()) throw ProtocolError("external predictor: unknown class '" + line + "'");
      out.push_back(static_cast<int>(it - class_names_.begin()));
      ++got;
    }
    if (got != expected)
      throw ProtocolError("external predictor: got " + std::to_string(got) + " labels for " +
                          std::to_string(expected) + " instances");
  }

  Schema schema_;
  std::vector<std::string> class_names_;
  pid_t pid_ = -1;
  std::FILE* out_ = nullptr;
  std::FILE* in_ = nullptr;
  mutable std::mutex mutex_;
};

// Server side of the protocol: answers batches read from `in` until EOF.
inline void serve_protocol(std::istream& in, std::ostream& out, const Predictor& model, const Schema& schema,
                           const std::vector<std::string>& class_names) {
  std::vector<Instance> batch;
  std::string line;
  std::size_t line_no = 0;
  auto flush_batch = [&] {
    for (int y : model.predict_batch(batch)) out << class_names.at(static_cast<std::size_t>(y)) << '\n';
    out << '\n';
    out.flush();
    batch.clear();
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush_batch();
      continue;
    }
    std::istringstream row_in(line);
    const auto row = csv::read_row(row_in);
    batch.push_back(parse_instance(schema, *row, "request line " + std::to_string(line_no)));
  }
  if (!batch.empty()) flush_batch();
}

}  // namespace cfx
