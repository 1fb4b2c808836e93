#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stconv {

/// counts(i, j) = clips of true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const {
    return counts_[truth * classes_ + pred];
  }
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t trace() const noexcept;

  /// Throws InputError when either id is out of range.
  void accumulate(std::size_t truth, std::size_t pred);

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// trace / total. Throws InputError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

struct ClassReportRow {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool degenerate = false;  // some ratio was 0/0 and reported as 0
};

/// Harmonic mean of precision and recall, 0 when both are 0.
double f1_score(double precision, double recall);

ClassReportRow per_class(const ConfusionMatrix& cm, std::size_t c, std::string name = {});

/// One row per class; names default to the class index.
std::vector<ClassReportRow> class_rows(const ConfusionMatrix& cm,
                                       std::span<const std::string> names = {});

struct MacroAverage {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Unweighted column means. Throws InputError on no rows.
MacroAverage macro_average(std::span<const ClassReportRow> rows);

enum class ReportFormat { kJson, kCsv };

ReportFormat parse_report_format(std::string_view name);

/// CSV: class,precision,recall,f1,support rows at 4 decimals, then a
/// macro_avg row whose support is the total. JSON: full-precision rows,
/// macro averages, accuracy and the raw matrix. F1 is always recomputed from
/// precision and recall, so a hand-rounded F1 will not be reproduced.
std::string emit_report(std::span<const ClassReportRow> rows, const ConfusionMatrix& cm,
                        ReportFormat format);

}  // namespace stconv
