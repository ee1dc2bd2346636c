// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/mixed_precision.hpp"
#include "qtune/outlier.hpp"
#include "qtune/pipeline.hpp"

#include <json.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace qtune {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

/// Throws Error when v is NaN or infinite.
Json finite_number(double v, std::string_view what);

/// {"schema_version", "command", "config", "results"} in that order.
Json make_report(std::string_view command, Json config, Json results);

/// Serializes with two-space indentation and a trailing newline. Every number
/// in the tree is checked for finiteness first.
std::string dump_report(const Json& doc);

Json to_json(const QuantConfig& cfg);
Json to_json(const PipelineConfig& cfg);
Json to_json(const ExperimentReport& rep);
Json to_json(const std::vector<SweepRow>& rows);
Json to_json(const std::vector<PlanRunResult>& runs);
Json to_json(const PlanEvaluation& eval);

/// Counts, ranking, selection and ratio for one matrix.
Json outlier_summary(const OutlierReport& rep, const DimSelection& sel);

} // namespace qtune
