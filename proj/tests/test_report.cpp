// Copyright 2026 The Crashaccum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <random>

#include "crashaccum/report.hpp"
#include "test_support.hpp"

namespace crashaccum {
namespace {

Frame Fn(std::string function) {
  Frame f;
  f.function = std::move(function);
  return f;
}

TEST(ParseRawStacktraceTest, SanitizerFileForm) {
  const Stacktrace t =
      ParseRawStacktrace("#0 0x401234 in foo /src/a.c:12:3\n#1 0x401300 in bar /src/b.c:7");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.frames[0].function, "foo");
  EXPECT_EQ(t.frames[0].file, "/src/a.c");
  EXPECT_EQ(t.frames[0].line, 12u);
  EXPECT_EQ(t.frames[0].column, 3u);
  EXPECT_EQ(t.frames[0].address, 0x401234u);
  EXPECT_EQ(t.frames[1].function, "bar");
  EXPECT_EQ(t.frames[1].file, "/src/b.c");
  EXPECT_EQ(t.frames[1].line, 7u);
  EXPECT_EQ(t.frames[1].column, 0u);
}

TEST(ParseRawStacktraceTest, SkipsGarbageAndReadsModuleForm) {
  const Stacktrace t = ParseRawStacktrace("garbage\n#0 0x5 in main (/bin/t+0x5)");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.frames[0].function, "main");
  EXPECT_EQ(t.frames[0].module, "/bin/t");
  EXPECT_EQ(t.frames[0].address, 5u);
  EXPECT_TRUE(t.frames[0].file.empty());
}

TEST(ParseRawStacktraceTest, NoFramesIsEmptyTrace) {
  try {
    ParseRawStacktrace("no frames here");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTrace);
  }
}

TEST(ParseRawStacktraceTest, DebuggerForms) {
  const Stacktrace t = ParseRawStacktrace(
      "#0  0x00007ffff7a42428 in raise () from /lib/libc.so.6\n"
      "#1  0x0000555555554a1d in parse_header (buf=0x0, n=3) at /src/h.c:33\n"
      "#2  main at /src/main.c:9:2\n"
      "#3  0x0000555555554b00\n"
      "#4  0x0000555555554c00 in std::vector<int>::at(unsigned long) const /src/v.h:1\n"
      "#5\n");
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t.frames[0].function, "raise");
  EXPECT_EQ(t.frames[0].module, "/lib/libc.so.6");
  EXPECT_EQ(t.frames[1].function, "parse_header");
  EXPECT_EQ(t.frames[1].file, "/src/h.c");
  EXPECT_EQ(t.frames[1].line, 33u);
  // "#2 main at ..." has no "in" and no address, so nothing identifies it.
  EXPECT_EQ(t.frames[2].address, 0x555555554b00u);
  EXPECT_TRUE(t.frames[2].function.empty());
  EXPECT_EQ(t.frames[3].function, "std::vector<int>::at(unsigned long) const");
  EXPECT_EQ(t.frames[3].file, "/src/v.h");
}

TEST(ParseRawStacktraceTest, KeepsTextualOrder) {
  const Stacktrace t = ParseRawStacktrace("#1 0x2 in b\n#0 0x1 in a\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.frames[0].function, "b");
  EXPECT_EQ(t.frames[1].function, "a");
}

TEST(NormalizeTest, FiltersPrefixRule) {
  const Stacktrace t{{Fn("__asan_report"), Fn("foo"), Fn("bar")}};
  const IgnoreRules rules({{IgnoreRules::Kind::kPrefix, "__asan"}});
  const Stacktrace n = Normalize(t, rules);
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n.frames[0].function, "foo");
  EXPECT_EQ(n.frames[1].function, "bar");
}

TEST(NormalizeTest, EmptyRulesIsIdentity) {
  const Stacktrace t{{Fn("foo")}};
  EXPECT_EQ(Normalize(t, IgnoreRules{}), t);
}

TEST(NormalizeTest, AllFilteredIsAnError) {
  const Stacktrace t{{Fn("__asan_x")}};
  try {
    Normalize(t, IgnoreRules({{IgnoreRules::Kind::kPrefix, "__asan"}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAllFramesFiltered);
  }
}

TEST(NormalizeTest, MatchesModuleAndSubstringAndIsCaseSensitive) {
  Frame in_libc = Fn("strlen");
  in_libc.module = "/lib/libc.so.6";
  const Stacktrace t{{in_libc, Fn("Foo_abort_handler"), Fn("keep")}};
  const IgnoreRules rules = IgnoreRules::Parse("# comment\n\n*libc.so*\n*abort*\n");
  ASSERT_EQ(rules.rules().size(), 2u);
  EXPECT_EQ(Normalize(t, rules), (Stacktrace{{Fn("keep")}}));
  EXPECT_EQ(Normalize(t, IgnoreRules::Parse("KEEP\n")).size(), 3u);
}

TEST(NormalizeTest, IdempotentOnRandomTraces) {
  std::mt19937_64 rng(7);
  const IgnoreRules rules = IgnoreRules::Defaults();
  const std::vector<std::string> names = {"__asan_memcpy", "abort", "raise", "foo", "bar",
                                          "__libc_start_main", "parse", "main"};
  std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);
  for (int iter = 0; iter < 300; ++iter) {
    Stacktrace t;
    for (int k = 0; k < 1 + iter % 12; ++k) t.frames.push_back(Fn(names[pick(rng)]));
    t.frames.push_back(Fn("main"));
    const Stacktrace once = Normalize(t, rules);
    EXPECT_EQ(Normalize(once, rules), once);
  }
}

TEST(FingerprintTest, DeterministicAndSensitiveToFunctionNames) {
  const Stacktrace a{{Fn("foo"), Fn("bar")}};
  const Stacktrace b{{Fn("foo"), Fn("baz")}};
  EXPECT_EQ(Fingerprint(a), Fingerprint(a));
  EXPECT_EQ(Fingerprint(a).size(), 64u);
  EXPECT_NE(Fingerprint(a), Fingerprint(b));
}

TEST(FingerprintTest, AddressesIgnoredUnderFunctionKeys) {
  Frame f1 = Fn("foo");
  f1.address = 0x10;
  f1.module = "/bin/t";
  Frame f2 = f1;
  f2.address = 0x20;
  const Stacktrace a{{f1}};
  const Stacktrace b{{f2}};
  EXPECT_EQ(Fingerprint(a, KeyMode::kFunctionName), Fingerprint(b, KeyMode::kFunctionName));
  EXPECT_NE(Fingerprint(a, KeyMode::kFunctionOrModuleOffset),
            Fingerprint(b, KeyMode::kFunctionOrModuleOffset));
}

TEST(FingerprintTest, EqualIffKeySequencesEqual) {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 500; ++iter) {
    const auto ka = testing::RandomKeys(rng, 1, 50, 3);
    const auto kb = iter % 3 == 0 ? ka : testing::RandomKeys(rng, 1, 50, 3);
    Stacktrace a;
    Stacktrace b;
    for (const auto& k : ka) a.frames.push_back(Fn(k));
    for (const auto& k : kb) b.frames.push_back(Fn(k));
    EXPECT_EQ(Fingerprint(a) == Fingerprint(b), ka == kb);
  }
  // Length prefixes keep concatenations apart.
  EXPECT_NE(Fingerprint(Stacktrace{{Fn("ab"), Fn("c")}}),
            Fingerprint(Stacktrace{{Fn("a"), Fn("bc")}}));
}

TEST(CrashlineTest, FirstFrameWithFile) {
  Frame with_file = Fn("bar");
  with_file.file = "/src/b.c";
  with_file.line = 7;
  EXPECT_EQ(ExtractCrashline(Stacktrace{{Fn("foo"), with_file}}), "/src/b.c:7");
  EXPECT_EQ(ExtractCrashline(Stacktrace{{Fn("foo")}}), "");
}

TEST(ReportJsonTest, RoundTrip) {
  const CrashReport r = MakeReport(
      "#0 0x401234 in foo /src/a.c:12:3\n#1 0x401300 in bar /src/b.c:7\n", IgnoreRules{});
  ASSERT_EQ(r.stacktrace.size(), 2u);
  EXPECT_EQ(r.crashline, "/src/a.c:12");
  const CrashReport back = ParseReportJson(SerializeReport(r));
  EXPECT_EQ(back, r);
  EXPECT_EQ(SerializeReport(back), SerializeReport(r));
}

TEST(ReportJsonTest, MissingFramesIsParseError) {
  const std::string bad = R"({"version":1,"id":"00","crashline":"","raw":""})";
  try {
    ParseReportJson(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
  }
  try {
    ParseReportJson("{not json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
  }
}

TEST(ReportJsonTest, AlteredIdIsFingerprintMismatch) {
  const CrashReport r = MakeReport("#0 0x1 in foo\n", IgnoreRules{});
  auto doc = ReportToJson(r);
  doc["id"] = std::string(64, '0');
  try {
    ParseReportJson(doc.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFingerprintMismatch);
  }
}

TEST(ReportJsonTest, RandomReportsRoundTrip) {
  std::mt19937_64 rng(3);
  for (int iter = 0; iter < 50; ++iter) {
    CrashReport r;
    for (const auto& k : testing::RandomKeys(rng, 1, 20, 6)) {
      Frame f = Fn(k);
      f.module = iter % 2 ? "/lib/x.so" : "";
      f.address = rng() & 0xffffff;
      if (iter % 3 == 0) {
        f.file = "/src/" + k + ".c";
        f.line = 1 + rng() % 100;
        f.column = rng() % 5;
      }
      r.stacktrace.frames.push_back(f);
    }
    r.id = Fingerprint(r.stacktrace);
    r.crashline = ExtractCrashline(r.stacktrace);
    r.raw = "raw \"text\"\n\t" + std::to_string(iter);
    EXPECT_EQ(ParseReportJson(SerializeReport(r)), r);
  }
}

}  // namespace
}  // namespace crashaccum
