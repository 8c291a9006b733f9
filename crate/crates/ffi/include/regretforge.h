#ifndef REGRETFORGE_H
#define REGRETFORGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_PARSE = 3,
  RF_STATUS_RENDER = 4,
  RF_STATUS_INVALID_ACTION = 5,
  RF_STATUS_EPISODE_DONE = 6,
  RF_STATUS_PANIC = 7,
} RfStatus;

/**
 * A running navigation episode; owns a copy of its website.
 */
typedef struct RfEpisode RfEpisode;

/**
 * A parsed design spec.
 */
typedef struct RfSpec RfSpec;

/**
 * A rendered website.
 */
typedef struct RfWebsite RfWebsite;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *rf_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void rf_string_free(char *s);

/**
 * `max(a, p) - mean(a, p)` for the two agents' mean returns. `antagonist`
 * (optional) receives 0 when A is the better agent and 1 when P is.
 *
 * # Safety
 * `out` must be writable; `antagonist` may be NULL.
 */
enum RfStatus rf_flexible_regret(double mean_a, double mean_p, double *out, uint8_t *antagonist);

/**
 * `max(returns_a) - mean(returns_p)`. Both lists must be non-empty.
 *
 * # Safety
 * `returns_a` and `returns_p` must point to `len_a` and `len_p` doubles.
 */
enum RfStatus rf_paired_regret(const double *returns_a,
                               size_t len_a,
                               const double *returns_p,
                               size_t len_p,
                               double *out);

/**
 * Parses GMDS/1 spec text.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` writable.
 */
enum RfStatus rf_spec_parse(const char *text, struct RfSpec **out);

/**
 * Canonical text of a spec.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum RfStatus rf_spec_to_text(const struct RfSpec *spec, char **out);

/**
 * # Safety
 * `spec` must be NULL or a live handle from [`rf_spec_parse`].
 */
void rf_spec_free(struct RfSpec *spec);

/**
 * Renders a spec into a website.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum RfStatus rf_website_render(const struct RfSpec *spec, struct RfWebsite **out);

/**
 * Parses the GMWB/1 website serialization.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` writable.
 */
enum RfStatus rf_website_parse(const char *text, struct RfWebsite **out);

/**
 * GMWB/1 serialization of a website.
 *
 * # Safety
 * `site` must be a live handle and `out` writable.
 */
enum RfStatus rf_website_serialize(const struct RfWebsite *site, char **out);

/**
 * HTML of page `page`.
 *
 * # Safety
 * `site` must be a live handle and `out` writable.
 */
enum RfStatus rf_website_page_html(const struct RfWebsite *site, size_t page, char **out);

/**
 * Page count, or 0 for NULL.
 *
 * # Safety
 * `site` must be NULL or a live handle.
 */
size_t rf_website_pages(const struct RfWebsite *site);

/**
 * Number of instruction fields, or 0 for NULL.
 *
 * # Safety
 * `site` must be NULL or a live handle.
 */
size_t rf_website_n_fields(const struct RfWebsite *site);

/**
 * # Safety
 * `site` must be NULL or a live handle.
 */
void rf_website_free(struct RfWebsite *site);

/**
 * Starts an episode on a copy of `site`. The website handle may be freed
 * afterwards.
 *
 * # Safety
 * `site` must be a live handle and `out` writable.
 */
enum RfStatus rf_episode_new(const struct RfWebsite *site,
                             uint64_t seed,
                             double gamma,
                             struct RfEpisode **out);

/**
 * Current observation as JSON.
 *
 * # Safety
 * `ep` must be a live handle and `out` writable.
 */
enum RfStatus rf_episode_observation_json(const struct RfEpisode *ep, char **out);

/**
 * Types instruction field `field` into `element` (or clicks it).
 * `reward` and `done` may be NULL.
 *
 * # Safety
 * `ep` must be a live handle; `reward` and `done` NULL or writable.
 */
enum RfStatus rf_episode_step(struct RfEpisode *ep,
                              size_t element,
                              size_t field,
                              double *reward,
                              bool *done);

/**
 * The scripted oracle's next action.
 *
 * # Safety
 * `ep` must be a live handle; `element` and `field` writable.
 */
enum RfStatus rf_episode_oracle_action(const struct RfEpisode *ep, size_t *element, size_t *field);

/**
 * Discounted return of the rewards so far.
 *
 * # Safety
 * `ep` must be a live handle and `out` writable.
 */
enum RfStatus rf_episode_return(const struct RfEpisode *ep, double *out);

/**
 * True once the episode ended by submission with every field correct.
 *
 * # Safety
 * `ep` must be NULL or a live handle.
 */
bool rf_episode_succeeded(const struct RfEpisode *ep);

/**
 * # Safety
 * `ep` must be NULL or a live handle.
 */
void rf_episode_free(struct RfEpisode *ep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REGRETFORGE_H */
