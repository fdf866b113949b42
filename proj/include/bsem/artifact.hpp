#pragma once

#include <string>

#include "bsem/engine.hpp"

namespace bsem {

// writes the run directory: config.json, model.lav, partable.csv, data.csv,
// draws_chain<k>.csv, summary.{txt,json}, fitmeasures.{txt,json}
void save_run(const std::string& dir, const FitResult& result);

// reconstructs a result from a run directory; fit measures are taken from
// fitmeasures.json when present rather than recomputed
FitResult load_run(const std::string& dir);

}  // namespace bsem
