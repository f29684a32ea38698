#include <math.h>
#include <stdio.h>
#include <string.h>

#include "bggn.h"

#define CHECK(call)                                                   \
  do {                                                                \
    BggnStatus s_ = (call);                                           \
    if (s_ != BGGN_STATUS_OK) {                                       \
      char msg[256];                                                  \
      bggn_last_error_message(msg, sizeof msg);                       \
      fprintf(stderr, "%s failed with %d: %s\n", #call, (int)s_, msg); \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  BggnTable *table = NULL;
  CHECK(bggn_table_new(3, &table));
  const uint8_t hi[3] = {1, 1, 0};
  const uint8_t lo[3] = {0, 0, 1};
  CHECK(bggn_table_insert(table, hi, 3, 2.0, 1));
  CHECK(bggn_table_insert(table, lo, 3, 0.1, 1));
  double bias = 0.0;
  CHECK(bggn_table_bias(table, hi, 3, &bias));
  if (bias != 2.0) return 2;

  const uint8_t bad[2] = {1, 1};
  if (bggn_table_insert(table, bad, 2, 1.0, 1) != BGGN_STATUS_DIMENSION_MISMATCH) return 3;
  char msg[8];
  size_t full = bggn_last_error_message(msg, sizeof msg);
  if (full <= strlen(msg) || msg[7] != '\0') return 4;

  BggnLandscape *land = NULL;
  CHECK(bggn_landscape_planted(4, 1, 5, &land));
  BggnTable *sampled = NULL;
  CHECK(bggn_landscape_sample(land, 16, 2, &sampled));
  if (bggn_table_len(sampled) != 16) return 5;

  printf("bggn %s ok\n", bggn_version());
  bggn_table_free(sampled);
  bggn_landscape_free(land);
  bggn_table_free(table);
  return 0;
}
