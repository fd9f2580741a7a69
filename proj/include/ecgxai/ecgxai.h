#ifndef ECGXAI_H
#define ECGXAI_H

#include <stddef.h>

#if defined(ECGXAI_BUILDING_LIBRARY)
#define ECGXAI_API __attribute__((visibility("default")))
#else
#define ECGXAI_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ecgxai_status {
  ECGXAI_OK = 0,
  ECGXAI_INVALID_ARGUMENT = 1,
  ECGXAI_NOT_FOUND = 2,
  ECGXAI_RUNTIME_ERROR = 3
} ecgxai_status;

typedef struct ecgxai_dataset ecgxai_dataset;
typedef struct ecgxai_model ecgxai_model;

/* Message of the last failed call on this thread; empty after success. */
ECGXAI_API const char* ecgxai_last_error(void);
ECGXAI_API const char* ecgxai_version(void);

/* Strings returned through char** outputs are released with this. */
ECGXAI_API void ecgxai_string_free(char* s);

ECGXAI_API ecgxai_status ecgxai_dataset_load(const char* dir, ecgxai_dataset** out);
/* config_json holds "synth" command keys; NULL or "" takes the defaults. */
ECGXAI_API ecgxai_status ecgxai_dataset_generate(const char* config_json, size_t n, ecgxai_dataset** out);
ECGXAI_API void ecgxai_dataset_free(ecgxai_dataset* ds);
ECGXAI_API size_t ecgxai_dataset_size(const ecgxai_dataset* ds);
ECGXAI_API ecgxai_status ecgxai_record_length(const ecgxai_dataset* ds, size_t index, size_t* length);
/* Copies record `index` as [length, 12] row-major into `out` (capacity in doubles). */
ECGXAI_API ecgxai_status ecgxai_record_signal(const ecgxai_dataset* ds, size_t index, double* out, size_t capacity);

ECGXAI_API ecgxai_status ecgxai_model_load(const char* dir, ecgxai_model** out);
ECGXAI_API void ecgxai_model_free(ecgxai_model* m);
ECGXAI_API size_t ecgxai_model_outputs(const ecgxai_model* m);
/* Raw outputs (logits) for one [length, 12] signal on the full length. */
ECGXAI_API ecgxai_status ecgxai_predict(const ecgxai_model* m, const double* signal, size_t length, double* out);
/* Attribution map [length, 12] for output `output`. method: saliency, ig,
   gradcam, lrp-eps, lrp-zplus. options_json may set ig_steps, gradcam_layer,
   lrp_epsilon. */
ECGXAI_API ecgxai_status ecgxai_attribute(const ecgxai_model* m, const double* signal, size_t length, size_t output,
                                          const char* method, const char* options_json, double* out);

/* Runs a pipeline command, writing config.json, log.txt and results to out_dir. */
ECGXAI_API ecgxai_status ecgxai_run(const char* command, const char* config_json, const char* out_dir, size_t jobs);
ECGXAI_API ecgxai_status ecgxai_command_defaults(const char* command, char** out_json);
ECGXAI_API ecgxai_status ecgxai_resolve_config(const char* command, const char* config_json, char** out_json);

#ifdef __cplusplus
}
#endif

#endif
