#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace selfrepair {

using Cell = std::variant<std::int64_t, double, std::string>;

using MetaValue = std::variant<std::int64_t, double, std::string,
                               std::vector<std::pair<std::string, std::string>>>;

enum class ExportFormat { Csv, JsonLines };

ExportFormat export_format_from_string(const std::string& s);
std::string to_string(ExportFormat f);

/// Column-ordered measurement table plus provenance metadata. Row order is
/// fixed by the producer (sequence id, position, component), never by worker
/// scheduling, so exports are byte-deterministic.
class ResultsTable {
public:
    explicit ResultsTable(std::vector<std::string> columns);

    const std::vector<std::string>& columns() const { return columns_; }
    const std::vector<std::vector<Cell>>& rows() const { return rows_; }
    std::int64_t row_count() const { return static_cast<std::int64_t>(rows_.size()); }

    /// Throws ContractError if the cell count does not match the header.
    void add_row(std::vector<Cell> row);

    void set_meta(const std::string& key, MetaValue value);
    const std::vector<std::pair<std::string, MetaValue>>& metadata() const { return meta_; }

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<Cell>> rows_;
    std::vector<std::pair<std::string, MetaValue>> meta_;
};

/// Formats one cell the way exports do: integers plain, floats with 9
/// significant digits, strings RFC-4180 quoted when needed.
std::string format_cell_csv(const Cell& cell);

/// Writes the table. CSV: RFC-4180 quoting, a header row, fixed column order,
/// floats printed with 9 significant digits; an empty table yields a
/// header-only file. JSON lines mirrors the columns, one object per row.
/// Metadata goes to a sidecar at "<path>.meta.json". Re-exporting the same
/// table produces byte-identical files. Throws DataError on an unwritable
/// path.
void export_results(const ResultsTable& table, const std::filesystem::path& path,
                    ExportFormat format);

/// Incremental writer sharing the export formats, for large per-token row
/// streams that should not accumulate in memory. The metadata sidecar is
/// written on close() (or destruction).
class StreamingTableWriter {
public:
    StreamingTableWriter(std::vector<std::string> columns, std::filesystem::path path,
                         ExportFormat format);
    ~StreamingTableWriter();

    StreamingTableWriter(const StreamingTableWriter&) = delete;
    StreamingTableWriter& operator=(const StreamingTableWriter&) = delete;

    void add_row(const std::vector<Cell>& row);
    void set_meta(const std::string& key, MetaValue value);
    std::int64_t row_count() const { return rows_written_; }
    const std::filesystem::path& path() const { return path_; }
    void close();

private:
    std::vector<std::string> columns_;
    std::filesystem::path path_;
    ExportFormat format_;
    std::vector<std::pair<std::string, MetaValue>> meta_;
    std::ofstream out_;
    std::string buffer_;
    std::int64_t rows_written_ = 0;
    bool closed_ = false;
};

} // namespace selfrepair
