#include <doctest.h>

#include "retfuse/csv.hpp"
#include "retfuse/error.hpp"
#include "test_support.hpp"

using namespace retfuse;

TEST_CASE("csv parses quoted fields and tracks line numbers") {
    const auto t = csv::parse("a,b,c\n1,\"x, y\",3\n\n\"he said \"\"hi\"\"\",,z\r\n");
    CHECK(t.header == csv::Row{"a", "b", "c"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0] == csv::Row{"1", "x, y", "3"});
    CHECK(t.rows[1] == csv::Row{"he said \"hi\"", "", "z"});
    CHECK(t.line_numbers == std::vector<std::size_t>{2, 4});
}

TEST_CASE("csv keeps embedded newlines inside quotes") {
    const auto t = csv::parse("a,b\n\"multi\nline\",2\n3,4\n");
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][0] == "multi\nline");
    CHECK(t.line_numbers[1] == 4);
}

TEST_CASE("csv strips a byte order mark") {
    const auto t = csv::parse("\xEF\xBB\xBFpatient_id,x\nA,1\n");
    CHECK(t.header[0] == "patient_id");
}

TEST_CASE("csv rejects an unterminated quote") { CHECK_THROWS_AS(csv::parse("a\n\"open\n"), Error); }

TEST_CASE("csv join and parse round-trip") {
    const csv::Row row{"plain", "with,comma", "with \"quote\"", "", " padded "};
    const auto t = csv::parse(csv::join({"h1", "h2", "h3", "h4", "h5"}) + "\n" + csv::join(row) + "\n");
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0] == row);
}

TEST_CASE("csv helpers") {
    CHECK(csv::trim("  a b \t") == "a b");
    CHECK(csv::to_lower("MaLe") == "male");
    CHECK(csv::escape("x") == "x");
    CHECK(csv::escape("x,y") == "\"x,y\"");
}

TEST_CASE("csv read_file reports a missing file") {
    CHECK_THROWS_AS(csv::read_file("/nonexistent/retfuse/file.csv"), Error);
}
