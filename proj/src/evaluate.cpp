#include "rainrecon/baselines.hpp"
#include "rainrecon/errors.hpp"
#include "rainrecon/harness.hpp"

namespace rainrecon {

MetricsReport evaluate_fields(const std::string& method, const Dataset& ds, const Experiment& exp,
                              const FieldPredictor& predictor, int min_history) {
  std::vector<double> truth, pred;
  std::vector<std::string> station_of;
  int scored_steps = 0;
  for (int t = std::max(exp.train_end, min_history); t < ds.steps(); ++t) {
    ++scored_steps;
    const RainField field = predictor(t);
    for (std::size_t i : exp.partition.held_out_index) {
      if (!ds.gauges.observed(i, t)) continue;
      const auto& s = ds.gauges.stations[i];
      truth.push_back(ds.gauges.rain_at(i, t));
      pred.push_back(field.sample(s.x, s.y));
      station_of.push_back(s.id);
    }
  }
  if (scored_steps == 0) throw DomainError("evaluate: no test step has enough history");
  if (truth.empty()) throw DomainError("evaluate: no observed held-out samples in the test steps");
  return score(method, truth, pred, station_of);
}

MetricsReport evaluate(const ReconstructionModel& model, const Dataset& ds, const Experiment& exp,
                       const std::string& method) {
  const std::size_t window = model.config().window;
  return evaluate_fields(
      method, ds, exp,
      [&](int t) {
        return reconstruct_field(model, make_window(ds, exp.partition.visible_index, t, window));
      },
      static_cast<int>(window) - 1);
}

const std::vector<std::string>& baseline_methods() {
  static const std::vector<std::string> methods{"tin", "tps", "idw", "zr"};
  return methods;
}

MetricsReport run_baseline(const std::string& method, const Dataset& ds, const Experiment& exp,
                           const BaselineOptions& options) {
  const auto& g = ds.radar.georef;
  const auto& visible = exp.partition.visible;
  FieldPredictor predictor;
  if (method == "tin") {
    predictor = [&](int t) { return tin_interpolate(visible, t, g); };
  } else if (method == "tps") {
    predictor = [&](int t) { return tps_interpolate(visible, t, g, options.tps_smoothing); };
  } else if (method == "idw") {
    predictor = [&](int t) { return idw_interpolate(visible, t, g, options.idw_power); };
  } else if (method == "zr") {
    predictor = [&](int t) { return zr_baseline_field(ds.radar, t, options.zr); };
  } else {
    throw UsageError("unknown baseline method '" + method + "' (valid: tin, tps, idw, zr)");
  }
  return evaluate_fields(method, ds, exp, predictor);
}

}  // namespace rainrecon
