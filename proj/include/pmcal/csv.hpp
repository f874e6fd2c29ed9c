#pragma once

#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

namespace pmcal::csv {

// Splits one CSV line. Double quotes delimit fields that contain commas or
// quotes; "" inside a quoted field is a literal quote. Throws DataError on
// unterminated quotes.
std::vector<std::string> split_line(const std::string& line);

// Reads the next line, tolerating \r\n. Returns false on EOF.
bool read_line(std::istream& in, std::string& line);

std::string escape_field(const std::string& field);
std::string join_row(const std::vector<std::string>& fields);

// Line-buffered writer that fails loudly on I/O errors.
class Writer {
public:
    explicit Writer(const std::string& path);
    void row(const std::vector<std::string>& fields);
    void raw_line(const std::string& line);
    void close();

private:
    std::ofstream out_;
    std::string path_;
};

}  // namespace pmcal::csv
