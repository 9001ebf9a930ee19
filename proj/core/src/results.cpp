#include "selfrepair/results.hpp"

#include <nlohmann/json.hpp>

#include "detail.hpp"
#include "selfrepair/errors.hpp"

namespace selfrepair {

using ordered_json = nlohmann::ordered_json;

ExportFormat export_format_from_string(const std::string& s) {
    if (s == "csv") return ExportFormat::Csv;
    if (s == "jsonl") return ExportFormat::JsonLines;
    throw ConfigError("unknown export format: " + s + " (expected csv or jsonl)");
}

std::string to_string(ExportFormat f) { return f == ExportFormat::Csv ? "csv" : "jsonl"; }

ResultsTable::ResultsTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void ResultsTable::add_row(std::vector<Cell> row) {
    if (row.size() != columns_.size())
        throw ContractError("row has " + std::to_string(row.size()) + " cells, table has " +
                            std::to_string(columns_.size()) + " columns");
    rows_.push_back(std::move(row));
}

void ResultsTable::set_meta(const std::string& key, MetaValue value) {
    for (auto& [k, v] : meta_)
        if (k == key) {
            v = std::move(value);
            return;
        }
    meta_.emplace_back(key, std::move(value));
}

namespace {

std::string quote_csv(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += "\"\"";
        else out += ch;
    }
    out += '"';
    return out;
}

std::string cell_csv(const Cell& cell) {
    if (const auto* i = std::get_if<std::int64_t>(&cell)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&cell)) return detail::format_double(*d);
    return quote_csv(std::get<std::string>(cell));
}

void append_row_csv(std::string& out, const std::vector<Cell>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += cell_csv(row[i]);
    }
    out += '\n';
}

void append_row_jsonl(std::string& out, const std::vector<std::string>& columns,
                      const std::vector<Cell>& row) {
    ordered_json obj;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (const auto* v = std::get_if<std::int64_t>(&row[i])) obj[columns[i]] = *v;
        else if (const auto* d = std::get_if<double>(&row[i])) obj[columns[i]] = *d;
        else obj[columns[i]] = std::get<std::string>(row[i]);
    }
    out += obj.dump();
    out += '\n';
}

std::string header_line_csv(const std::vector<std::string>& columns) {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out += ',';
        out += quote_csv(columns[i]);
    }
    out += '\n';
    return out;
}

ordered_json meta_to_json(const std::vector<std::pair<std::string, MetaValue>>& meta) {
    ordered_json obj;
    for (const auto& [key, value] : meta) {
        if (const auto* i = std::get_if<std::int64_t>(&value)) obj[key] = *i;
        else if (const auto* d = std::get_if<double>(&value)) obj[key] = *d;
        else if (const auto* s = std::get_if<std::string>(&value)) obj[key] = *s;
        else {
            ordered_json nested;
            for (const auto& [k, v] :
                 std::get<std::vector<std::pair<std::string, std::string>>>(value))
                nested[k] = v;
            obj[key] = nested;
        }
    }
    return obj;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw DataError(path.string() + ": write failed");
}

void write_meta_sidecar(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, MetaValue>>& meta,
                        const std::vector<std::string>& columns, std::int64_t rows) {
    ordered_json obj = meta_to_json(meta);
    obj["columns"] = columns;
    obj["rows"] = rows;
    std::filesystem::path sidecar = path;
    sidecar += ".meta.json";
    write_file(sidecar, obj.dump(2) + "\n");
}

} // namespace

std::string format_cell_csv(const Cell& cell) { return cell_csv(cell); }

void export_results(const ResultsTable& table, const std::filesystem::path& path,
                    ExportFormat format) {
    std::string out;
    if (format == ExportFormat::Csv) {
        out = header_line_csv(table.columns());
        for (const auto& row : table.rows()) append_row_csv(out, row);
    } else {
        for (const auto& row : table.rows()) append_row_jsonl(out, table.columns(), row);
    }
    write_file(path, out);
    write_meta_sidecar(path, table.metadata(), table.columns(), table.row_count());
}

StreamingTableWriter::StreamingTableWriter(std::vector<std::string> columns,
                                           std::filesystem::path path, ExportFormat format)
    : columns_(std::move(columns)), path_(std::move(path)), format_(format) {
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError(path_.string() + ": cannot open for writing");
    if (format_ == ExportFormat::Csv) {
        const std::string header = header_line_csv(columns_);
        out_.write(header.data(), static_cast<std::streamsize>(header.size()));
    }
}

StreamingTableWriter::~StreamingTableWriter() {
    try {
        close();
    } catch (...) {
        // Destruction must not throw; close() explicitly to observe errors.
    }
}

void StreamingTableWriter::add_row(const std::vector<Cell>& row) {
    if (row.size() != columns_.size())
        throw ContractError("row has " + std::to_string(row.size()) + " cells, table has " +
                            std::to_string(columns_.size()) + " columns");
    buffer_.clear();
    if (format_ == ExportFormat::Csv) append_row_csv(buffer_, row);
    else append_row_jsonl(buffer_, columns_, row);
    out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    ++rows_written_;
}

void StreamingTableWriter::set_meta(const std::string& key, MetaValue value) {
    for (auto& [k, v] : meta_)
        if (k == key) {
            v = std::move(value);
            return;
        }
    meta_.emplace_back(key, std::move(value));
}

void StreamingTableWriter::close() {
    if (closed_) return;
    closed_ = true;
    out_.flush();
    if (!out_) throw DataError(path_.string() + ": write failed");
    out_.close();
    write_meta_sidecar(path_, meta_, columns_, rows_written_);
}

} // namespace selfrepair
