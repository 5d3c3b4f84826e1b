#pragma once

// Explanation artifacts built from M4 aspect-score matrices: CSV and JSON
// exports plus a static SVG heatmap with a legend and mean-score bars.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "recapd/error.hpp"
#include "recapd/tensor.hpp"

namespace recapd {

struct ExplanationRecord {
  std::string utterance_id;
  std::vector<std::string> aspect_names;
  /// [T x K], rows sum to one.
  Tensor scores;
  std::vector<double> mean_scores;
  /// P(PD).
  double prediction = 0.0;
  int label = 0;

  void validate() const {
    scores.require_rank(2);
    if (scores.cols() != aspect_names.size()) {
      throw DimensionError("explanation '" + utterance_id + "': " + std::to_string(scores.cols()) + " score columns for " +
                           std::to_string(aspect_names.size()) + " aspects");
    }
    for (std::size_t t = 0; t < scores.rows(); ++t) {
      double s = 0.0;
      for (double v : scores.row(t)) s += v;
      if (std::abs(s - 1.0) > 1e-9) {
        throw ValueError("explanation '" + utterance_id + "': score row " + std::to_string(t) + " sums to " +
                         std::to_string(s));
      }
    }
  }
};

struct ExplanationSummary {
  std::vector<double> mean_scores;
  std::size_t dominant = 0;
};

/// Column means; the dominant aspect is the first maximum.
inline ExplanationSummary summarize(const ExplanationRecord& r) {
  ExplanationSummary s;
  const std::size_t t = r.scores.rows(), k = r.scores.cols();
  s.mean_scores.assign(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < t; ++i) s.mean_scores[j] += r.scores(i, j);
    s.mean_scores[j] /= static_cast<double>(t);
  }
  s.dominant = static_cast<std::size_t>(std::max_element(s.mean_scores.begin(), s.mean_scores.end()) -
                                        s.mean_scores.begin());
  return s;
}

inline ExplanationRecord make_record(std::string id, std::vector<std::string> aspects, Tensor scores,
                                     double prediction, int label) {
  ExplanationRecord r{std::move(id), std::move(aspects), std::move(scores), {}, prediction, label};
  r.validate();
  r.mean_scores = summarize(r).mean_scores;
  return r;
}

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

/// Long format: one line per (utterance, frame). Aspect columns come from the
/// first record; an empty list still gets the fixed columns.
inline std::string explanations_csv(const std::vector<ExplanationRecord>& records,
                                    const std::vector<std::string>& aspect_names) {
  std::ostringstream os;
  os << "utterance_id,t";
  for (const auto& a : aspect_names) os << ',' << detail::csv_field(a);
  os << ",prediction,label\n";
  for (const auto& r : records) {
    if (r.aspect_names != aspect_names) {
      throw ValueError("export_csv: record '" + r.utterance_id + "' has a different aspect layout");
    }
    for (std::size_t t = 0; t < r.scores.rows(); ++t) {
      os << detail::csv_field(r.utterance_id) << ',' << t;
      for (double v : r.scores.row(t)) os << ',' << detail::num(v);
      os << ',' << detail::num(r.prediction) << ',' << r.label << '\n';
    }
  }
  return os.str();
}

inline void export_csv(const std::vector<ExplanationRecord>& records, const std::filesystem::path& path,
                       const std::vector<std::string>& aspect_names = {}) {
  const auto& names = aspect_names.empty() && !records.empty() ? records.front().aspect_names : aspect_names;
  detail::write_file(path, explanations_csv(records, names));
}

inline nlohmann::ordered_json to_json(const ExplanationRecord& r) {
  nlohmann::ordered_json j;
  j["utterance_id"] = r.utterance_id;
  j["aspect_names"] = r.aspect_names;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < r.scores.rows(); ++t) {
    const auto row = r.scores.row(t);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["scores"] = rows;
  j["mean_scores"] = r.mean_scores;
  j["prediction"] = r.prediction;
  j["label"] = r.label;
  return j;
}

inline ExplanationRecord explanation_from_json(const nlohmann::json& j) {
  try {
    const auto rows = j.at("scores").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw ValueError("explanation has no score rows");
    ExplanationRecord r;
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.aspect_names = j.at("aspect_names").get<std::vector<std::string>>();
    r.scores = Tensor::from_rows(rows);
    r.mean_scores = j.at("mean_scores").get<std::vector<double>>();
    r.prediction = j.at("prediction").get<double>();
    r.label = j.at("label").get<int>();
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("invalid explanation record: ") + e.what());
  }
}

inline void export_json(const std::vector<ExplanationRecord>& records, const std::filesystem::path& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : records) j.push_back(to_json(r));
  detail::write_file(path, j.dump(2) + "\n");
}

inline std::vector<ExplanationRecord> load_explanations_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<ExplanationRecord> out;
  try {
    for (const auto& j : nlohmann::json::parse(in)) out.push_back(explanation_from_json(j));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError(path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

/// Sequential blue ramp, linear in RGB from (247,251,255) at 0 to (8,48,107)
/// at 1. Darker means a higher score.
inline std::string score_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto mix = [v](int lo, int hi) { return static_cast<int>(std::lround(lo + (hi - lo) * v)); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", mix(247, 8), mix(251, 48), mix(255, 107));
  return buf;
}

/// Aspects as rows, frames as columns, a 0..1 legend on the right and the
/// per-aspect mean scores as horizontal bars underneath.
inline std::string heatmap_svg(const ExplanationRecord& r) {
  r.validate();
  const std::size_t t = r.scores.rows(), k = r.scores.cols();
  const double label_w = 110, top = 40, cell_h = 24;
  const double cell_w = std::max(2.0, std::min(24.0, 720.0 / static_cast<double>(t)));
  const double grid_w = cell_w * static_cast<double>(t), grid_h = cell_h * static_cast<double>(k);
  const double legend_x = label_w + grid_w + 30, legend_h = grid_h;
  const double bars_top = top + grid_h + 50, bar_h = 16, bar_w = 300;
  const double width = legend_x + 80, height = bars_top + (bar_h + 6) * static_cast<double>(k) + 20;
  const std::vector<double> means = summarize(r).mean_scores;

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << label_w << "\" y=\"20\" font-size=\"14\">" << detail::xml_escape(r.utterance_id)
     << " | P(PD)=" << std::fixed << std::setprecision(3) << r.prediction << std::defaultfloat << std::setprecision(6)
     << " | label=" << (r.label == 1 ? "PD" : "HC") << "</text>\n";

  os << "<g id=\"heatmap\">\n";
  for (std::size_t a = 0; a < k; ++a) {
    const double y = top + cell_h * static_cast<double>(a);
    os << "<text x=\"" << label_w - 6 << "\" y=\"" << y + cell_h * 0.65 << "\" text-anchor=\"end\">"
       << detail::xml_escape(r.aspect_names[a]) << "</text>\n";
    for (std::size_t i = 0; i < t; ++i) {
      const double v = r.scores(i, a);
      os << "<rect class=\"cell\" x=\"" << label_w + cell_w * static_cast<double>(i) << "\" y=\"" << y << "\" width=\""
         << cell_w << "\" height=\"" << cell_h << "\" fill=\"" << score_color(v) << "\" data-aspect=\"" << a
         << "\" data-t=\"" << i << "\" data-score=\"" << detail::num(v) << "\"/>\n";
    }
  }
  os << "<text x=\"" << label_w + grid_w / 2 << "\" y=\"" << top + grid_h + 18
     << "\" text-anchor=\"middle\">frame</text>\n";
  os << "</g>\n";

  os << "<g id=\"legend\">\n<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">"
     << "<stop offset=\"0\" stop-color=\"" << score_color(0.0) << "\"/>"
     << "<stop offset=\"1\" stop-color=\"" << score_color(1.0) << "\"/></linearGradient></defs>\n"
     << "<rect x=\"" << legend_x << "\" y=\"" << top << "\" width=\"14\" height=\"" << legend_h
     << "\" fill=\"url(#ramp)\" stroke=\"#444\"/>\n";
  for (double tick : {0.0, 0.5, 1.0}) {
    os << "<text x=\"" << legend_x + 20 << "\" y=\"" << top + legend_h * (1.0 - tick) + 4 << "\">" << tick
       << "</text>\n";
  }
  os << "</g>\n";

  os << "<g id=\"mean-scores\">\n<text x=\"" << label_w << "\" y=\"" << bars_top - 10
     << "\">mean score per aspect</text>\n";
  for (std::size_t a = 0; a < k; ++a) {
    const double y = bars_top + (bar_h + 6) * static_cast<double>(a);
    os << "<text x=\"" << label_w - 6 << "\" y=\"" << y + bar_h * 0.8 << "\" text-anchor=\"end\">"
       << detail::xml_escape(r.aspect_names[a]) << "</text>\n"
       << "<rect class=\"bar\" x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << bar_w * means[a] << "\" height=\""
       << bar_h << "\" fill=\"" << score_color(means[a]) << "\" stroke=\"#444\" data-score=\"" << detail::num(means[a])
       << "\"/>\n"
       << "<text x=\"" << label_w + bar_w * means[a] + 6 << "\" y=\"" << y + bar_h * 0.8 << "\">" << std::fixed
       << std::setprecision(3) << means[a] << std::defaultfloat << std::setprecision(6) << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

inline void render_heatmap_svg(const ExplanationRecord& r, const std::filesystem::path& path) {
  detail::write_file(path, heatmap_svg(r));
}

}  // namespace recapd
