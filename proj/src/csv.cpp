#include "probekit/csv.hpp"

#include <fstream>

#include "probekit/errors.hpp"

namespace probekit {

std::string layer_weights_csv(const ProbeModel& model) {
  const auto alpha = layer_alphas(model);
  if (!alpha) throw ConfigError("layer weights exist only for strategy=all models");
  std::string out = "layer_index,layer_name,alpha\n";
  for (std::size_t l = 0; l < alpha->size(); ++l) {
    out += std::to_string(l) + "," + model.arch.layers[l].name + "," + format_double((*alpha)[l]) + "\n";
  }
  return out;
}

std::string train_log_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,mean_loss\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.mean_loss) + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

}  // namespace probekit
