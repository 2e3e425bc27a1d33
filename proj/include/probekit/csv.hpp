#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <vector>

#include "probekit/probe.hpp"
#include "probekit/train.hpp"

namespace probekit {

// Shortest decimal that parses back to the same double, '.' separator.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// layer_index,layer_name,alpha -- one row per layer, in layer order.
std::string layer_weights_csv(const ProbeModel& model);
// epoch,lr,mean_loss
std::string train_log_csv(const std::vector<EpochRecord>& history);

void write_text(const std::filesystem::path& file, const std::string& content);

}  // namespace probekit
