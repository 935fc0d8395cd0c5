#include <stdio.h>
#include <string.h>

#include "kconflict.h"

#define CHECK(call)                                                            \
  do {                                                                         \
    enum KcStatus s_ = (call);                                                 \
    if (s_ != KC_STATUS_OK) {                                                  \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,                        \
              kc_last_error_message());                                        \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 4) {
    fprintf(stderr, "usage: smoke TRIPLETS ENTITIES RELATIONS\n");
    return 2;
  }
  struct KcGraph *g = NULL;
  CHECK(kc_graph_load(argv[1], argv[2], argv[3], "{\"top_degree_cutoff\": 0}", &g));

  size_t entities = 0, triplets = 0, degree = 0;
  CHECK(kc_graph_counts(g, &entities, &triplets));
  CHECK(kc_graph_degree(g, "Q1", &degree));
  if (kc_graph_degree(g, "nope", &degree) != KC_STATUS_NOT_FOUND) return 1;

  char *json = NULL;
  CHECK(kc_extract_subgraph_json(g, 7, 0, NULL, &json));
  int has_edges = strstr(json, "\"edges\"") != NULL;
  kc_string_free(json);

  CHECK(kc_parse_detection_response_json("Yes", 0, &json));
  int detected = strstr(json, "\"detected\":true") != NULL;
  kc_string_free(json);

  kc_graph_free(g);
  printf("%zu %zu %d %d %s\n", entities, triplets, has_edges, detected, kc_version());
  return 0;
}
