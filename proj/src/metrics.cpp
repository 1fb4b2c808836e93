#include "stconv/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "stconv/error.hpp"

namespace stconv {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw InputError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::trace() const noexcept {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += counts_[i * classes_ + i];
  return t;
}

void ConfusionMatrix::accumulate(std::size_t truth, std::size_t pred) {
  if (truth >= classes_ || pred >= classes_) {
    throw InputError("class id out of range: (" + std::to_string(truth) + ", " +
                     std::to_string(pred) + ") with " + std::to_string(classes_) + " classes");
  }
  ++counts_[truth * classes_ + pred];
  ++total_;
}

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InputError("accuracy is undefined for an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

ClassReportRow per_class(const ConfusionMatrix& cm, std::size_t c, std::string name) {
  if (c >= cm.classes()) throw InputError("class " + std::to_string(c) + " out of range");
  std::uint64_t tp = cm(c, c), fp = 0, fn = 0;
  for (std::size_t j = 0; j < cm.classes(); ++j) {
    if (j == c) continue;
    fp += cm(j, c);
    fn += cm(c, j);
  }
  ClassReportRow row;
  row.name = name.empty() ? std::to_string(c) : std::move(name);
  row.support = tp + fn;
  if (tp + fp > 0) {
    row.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  } else {
    row.degenerate = true;
  }
  if (tp + fn > 0) {
    row.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  } else {
    row.degenerate = true;
  }
  if (row.precision + row.recall == 0.0) row.degenerate = true;
  row.f1 = f1_score(row.precision, row.recall);
  return row;
}

std::vector<ClassReportRow> class_rows(const ConfusionMatrix& cm, std::span<const std::string> names) {
  if (!names.empty() && names.size() != cm.classes()) {
    throw InputError("expected " + std::to_string(cm.classes()) + " class names, got " +
                     std::to_string(names.size()));
  }
  std::vector<ClassReportRow> rows;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    rows.push_back(per_class(cm, c, names.empty() ? std::string() : names[c]));
  }
  return rows;
}

MacroAverage macro_average(std::span<const ClassReportRow> rows) {
  if (rows.empty()) throw InputError("macro average of no rows");
  MacroAverage m;
  for (const auto& r : rows) {
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
  }
  const double n = static_cast<double>(rows.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw InputError("unknown report format '" + std::string(name) + "' (expected json or csv)");
}

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string emit_report(std::span<const ClassReportRow> rows, const ConfusionMatrix& cm,
                        ReportFormat format) {
  const MacroAverage macro = macro_average(rows);
  if (format == ReportFormat::kCsv) {
    std::ostringstream os;
    os << "class,precision,recall,f1,support\n";
    for (const auto& r : rows) {
      os << r.name << ',' << fixed4(r.precision) << ',' << fixed4(r.recall) << ',' << fixed4(r.f1)
         << ',' << r.support << '\n';
    }
    os << "macro_avg," << fixed4(macro.precision) << ',' << fixed4(macro.recall) << ','
       << fixed4(macro.f1) << ',' << cm.total() << '\n';
    return os.str();
  }
  nlohmann::ordered_json doc;
  doc["classes"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    doc["classes"].push_back({{"class", r.name},
                              {"precision", r.precision},
                              {"recall", r.recall},
                              {"f1", r.f1},
                              {"support", r.support},
                              {"degenerate", r.degenerate}});
  }
  doc["macro"] = {{"precision", macro.precision}, {"recall", macro.recall}, {"f1", macro.f1}};
  if (cm.total() > 0) {
    doc["accuracy"] = accuracy(cm);
  } else {
    doc["accuracy"] = nullptr;
  }
  doc["total"] = cm.total();
  auto& matrix = doc["confusion_matrix"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < cm.classes(); ++j) row.push_back(cm(i, j));
    matrix.push_back(std::move(row));
  }
  return doc.dump(2) + "\n";
}

}  // namespace stconv
