use std::ffi::{CStr, CString};
use std::ptr;

use regretforge_ffi::*;

fn last_error() -> String {
    let p = rf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    rf_string_free(s);
    out
}

const LOGIN: &str = "GMDS/1\nk 1\nprovenance benchmark\nactions username@0 password@0 submit@0\n";

#[test]
fn regrets_match_core() {
    let mut out = 0.0;
    let mut tag = 9u8;
    unsafe {
        assert_eq!(rf_flexible_regret(0.2, 0.8, &mut out, &mut tag), RfStatus::Ok);
        assert_eq!(out, 0.5 * (0.8 - 0.2));
        assert_eq!(tag, 1);
        assert_eq!(rf_flexible_regret(f64::NAN, 0.0, &mut out, ptr::null_mut()), RfStatus::InvalidArgument);
        assert_eq!(rf_flexible_regret(0.0, 0.0, ptr::null_mut(), ptr::null_mut()), RfStatus::NullPointer);

        let a = [0.1, 0.9, -0.3];
        let p = [0.5, 0.25];
        assert_eq!(rf_paired_regret(a.as_ptr(), a.len(), p.as_ptr(), p.len(), &mut out), RfStatus::Ok);
        assert_eq!(out, 0.9 - 0.375);
        assert_eq!(rf_paired_regret(a.as_ptr(), 0, p.as_ptr(), p.len(), &mut out), RfStatus::InvalidArgument);
    }
}

#[test]
fn parse_errors_carry_position() {
    let text = CString::new("GMDS/1\nk x\n").unwrap();
    let mut spec = ptr::null_mut();
    unsafe {
        assert_eq!(rf_spec_parse(text.as_ptr(), &mut spec), RfStatus::Parse);
        assert!(spec.is_null());
        assert!(last_error().contains("2:"), "{}", last_error());
        assert_eq!(rf_spec_parse(ptr::null(), &mut spec), RfStatus::NullPointer);
    }
}

#[test]
fn oracle_solves_login_through_the_abi() {
    let text = CString::new(LOGIN).unwrap();
    unsafe {
        let mut spec = ptr::null_mut();
        assert_eq!(rf_spec_parse(text.as_ptr(), &mut spec), RfStatus::Ok);
        assert!(rf_last_error_message().is_null());
        let mut s = ptr::null_mut();
        assert_eq!(rf_spec_to_text(spec, &mut s), RfStatus::Ok);
        assert_eq!(take(s), LOGIN);

        let mut site = ptr::null_mut();
        assert_eq!(rf_website_render(spec, &mut site), RfStatus::Ok);
        rf_spec_free(spec);
        assert_eq!(rf_website_pages(site), 1);
        assert_eq!(rf_website_n_fields(site), 2);
        assert_eq!(rf_website_pages(ptr::null()), 0);

        let mut html = ptr::null_mut();
        assert_eq!(rf_website_page_html(site, 0, &mut html), RfStatus::Ok);
        assert!(take(html).contains("<input"));
        assert_eq!(rf_website_page_html(site, 3, &mut html), RfStatus::InvalidArgument);

        let mut ser = ptr::null_mut();
        assert_eq!(rf_website_serialize(site, &mut ser), RfStatus::Ok);
        let ser = CString::new(take(ser)).unwrap();
        let mut again = ptr::null_mut();
        assert_eq!(rf_website_parse(ser.as_ptr(), &mut again), RfStatus::Ok);
        assert_eq!(rf_website_n_fields(again), 2);
        rf_website_free(again);

        let mut ep = ptr::null_mut();
        assert_eq!(rf_episode_new(site, 7, 1.0, &mut ep), RfStatus::Ok);
        rf_website_free(site);

        let mut obs = ptr::null_mut();
        assert_eq!(rf_episode_observation_json(ep, &mut obs), RfStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(obs)).unwrap();
        assert_eq!(v["fields"].as_array().unwrap().len(), 2);

        let (mut e, mut f, mut r, mut done) = (0usize, 0usize, 0.0, false);
        let mut steps = 0;
        while !done {
            assert_eq!(rf_episode_oracle_action(ep, &mut e, &mut f), RfStatus::Ok);
            assert_eq!(rf_episode_step(ep, e, f, &mut r, &mut done), RfStatus::Ok);
            steps += 1;
            assert!(steps < 20);
        }
        assert!(rf_episode_succeeded(ep));
        let mut ret = 0.0;
        assert_eq!(rf_episode_return(ep, &mut ret), RfStatus::Ok);
        assert!(ret > 0.0);
        assert_eq!(rf_episode_step(ep, e, f, &mut r, &mut done), RfStatus::EpisodeDone);
        assert_eq!(rf_episode_oracle_action(ep, &mut e, &mut f), RfStatus::EpisodeDone);
        rf_episode_free(ep);
    }
}

#[test]
fn invalid_actions_are_reported() {
    let text = CString::new(LOGIN).unwrap();
    unsafe {
        let (mut spec, mut site, mut ep) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(rf_spec_parse(text.as_ptr(), &mut spec), RfStatus::Ok);
        assert_eq!(rf_website_render(spec, &mut site), RfStatus::Ok);
        assert_eq!(rf_episode_new(site, 1, 1.5, &mut ep), RfStatus::InvalidArgument);
        assert_eq!(rf_episode_new(site, 1, 0.99, &mut ep), RfStatus::Ok);
        assert_eq!(rf_episode_step(ep, 999, 0, ptr::null_mut(), ptr::null_mut()), RfStatus::InvalidAction);
        assert!(last_error().contains("999"));
        assert_eq!(rf_episode_step(ptr::null_mut(), 0, 0, ptr::null_mut(), ptr::null_mut()), RfStatus::NullPointer);
        rf_episode_free(ep);
        rf_website_free(site);
        rf_spec_free(spec);
        rf_episode_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/regretforge.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for t in ["typedef struct RfWebsite RfWebsite;", "typedef struct RfEpisode RfEpisode;", "RF_STATUS_OK = 0"] {
        assert!(header.contains(t), "{t}");
    }
}
