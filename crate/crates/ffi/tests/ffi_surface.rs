//! Exercises the C ABI the way a foreign binding would: through raw
//! pointers and status codes only.

use std::ffi::CStr;
use std::ptr;

use ilmpc_ffi::*;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(ilmpc_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn version_is_available() {
    let v = unsafe { CStr::from_ptr(ilmpc_version()) };
    assert!(!v.to_bytes().is_empty());
}

#[test]
fn wheel_velocity_conversion() {
    let (mut r, mut l) = (0.0, 0.0);
    let status = unsafe { ilmpc_wheel_velocities(0.035, 0.23, 0.035, 0.0, 0, &mut r, &mut l) };
    assert_eq!(status, IlmpcStatus::IlmpcOk);
    assert!((r - 1.0).abs() < 1e-12 && (l - 1.0).abs() < 1e-12);

    // Swapped convention exchanges the pair.
    let (mut r2, mut l2) = (0.0, 0.0);
    unsafe { ilmpc_wheel_velocities(0.035, 0.23, 0.0, 1.0, 1, &mut r2, &mut l2) };
    let (mut r3, mut l3) = (0.0, 0.0);
    unsafe { ilmpc_wheel_velocities(0.035, 0.23, 0.0, 1.0, 0, &mut r3, &mut l3) };
    assert_eq!((r2, l2), (l3, r3));

    // Invalid geometry is rejected with a message.
    let status = unsafe { ilmpc_wheel_velocities(0.0, 0.23, 0.0, 0.0, 0, &mut r, &mut l) };
    assert_eq!(status, IlmpcStatus::IlmpcInvalidArgument);
    assert!(last_error().contains("wheel"));
}

#[test]
fn task_queries_and_stepping() {
    let mut task: *mut IlmpcTask = ptr::null_mut();
    let status = unsafe { ilmpc_task_benchmark(&mut task) };
    assert_eq!(status, IlmpcStatus::IlmpcOk);
    assert_eq!(unsafe { ilmpc_task_state_dim(task) }, 3);
    assert_eq!(unsafe { ilmpc_task_input_dim(task) }, 2);

    let mut flag = -1;
    let inside = [0.0, 0.0, 0.0];
    unsafe { ilmpc_task_state_unsafe(task, inside.as_ptr(), 3, &mut flag) };
    assert_eq!(flag, 1);
    let outside = [3.0, 0.0, 0.0];
    unsafe { ilmpc_task_state_unsafe(task, outside.as_ptr(), 3, &mut flag) };
    assert_eq!(flag, 0);

    let x = [0.0, 0.0, 0.0];
    let u = [2.0, 0.0];
    let mut next = [0.0; 3];
    let status = unsafe { ilmpc_task_step(task, x.as_ptr(), 3, u.as_ptr(), 2, next.as_mut_ptr()) };
    assert_eq!(status, IlmpcStatus::IlmpcOk);
    assert!((next[0] - 0.2).abs() < 1e-12);

    // Dimension mismatch is an argument error.
    let status = unsafe { ilmpc_task_step(task, x.as_ptr(), 2, u.as_ptr(), 2, next.as_mut_ptr()) };
    assert_eq!(status, IlmpcStatus::IlmpcInvalidArgument);

    unsafe { ilmpc_task_free(task) };
}

#[test]
fn null_pointers_are_rejected() {
    let status = unsafe { ilmpc_task_benchmark(ptr::null_mut()) };
    assert_eq!(status, IlmpcStatus::IlmpcNullPointer);

    let mut cert: *mut IlmpcCertificate = ptr::null_mut();
    let status = unsafe { ilmpc_certificate_load(ptr::null(), &mut cert) };
    assert_eq!(status, IlmpcStatus::IlmpcNullPointer);

    let status = unsafe { ilmpc_certificate_load(c"/no/such/file".as_ptr(), &mut cert) };
    assert_eq!(status, IlmpcStatus::IlmpcIoError);
    assert!(!last_error().is_empty());

    // Freeing null handles is a safe no-op.
    unsafe {
        ilmpc_task_free(ptr::null_mut());
        ilmpc_certificate_free(ptr::null_mut());
        ilmpc_policy_free(ptr::null_mut());
        ilmpc_controller_free(ptr::null_mut());
    }
}

#[test]
fn certificate_policy_controller_roundtrip() {
    use ilmpc::nn::{Certificate, Mlp, Policy};
    use ilmpc::task::Bounds;
    use rand::SeedableRng;

    let dir = std::env::temp_dir().join(format!("ilmpc-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    // A small certificate whose values stay below the level, and a policy.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
    let mut net = Mlp::init(&[3, 8, 8, 1], &mut rng).unwrap();
    for w in net.weights.last_mut().unwrap() {
        *w *= 0.1;
    }
    for b in net.biases.last_mut().unwrap() {
        *b *= 0.1;
    }
    let cert = Certificate::new(net, 7.0).unwrap();
    let policy = Policy::new(
        Mlp::zeros(&[3, 8, 2]).unwrap(),
        Bounds::new(vec![0.0, -1.5707963267948966], vec![2.0, 1.5707963267948966]).unwrap(),
    )
    .unwrap();
    let cert_path = dir.join("cert.params");
    let policy_path = dir.join("policy.params");
    ilmpc::io::save_certificate(&cert, &cert_path).unwrap();
    ilmpc::io::save_policy(&policy, &policy_path).unwrap();

    unsafe {
        let mut task: *mut IlmpcTask = ptr::null_mut();
        assert_eq!(ilmpc_task_benchmark(&mut task), IlmpcStatus::IlmpcOk);

        let mut cert_handle: *mut IlmpcCertificate = ptr::null_mut();
        let c_path = std::ffi::CString::new(cert_path.to_str().unwrap()).unwrap();
        assert_eq!(
            ilmpc_certificate_load(c_path.as_ptr(), &mut cert_handle),
            IlmpcStatus::IlmpcOk
        );
        assert_eq!(ilmpc_certificate_level(cert_handle), 7.0);

        let x = [5.0, 0.5, 0.1];
        let mut v = -1.0;
        assert_eq!(
            ilmpc_certificate_value(cert_handle, x.as_ptr(), 3, &mut v),
            IlmpcStatus::IlmpcOk
        );
        assert!((v - cert.value(&x).unwrap()).abs() < 1e-15);

        let mut policy_handle: *mut IlmpcPolicy = ptr::null_mut();
        let p_path = std::ffi::CString::new(policy_path.to_str().unwrap()).unwrap();
        assert_eq!(
            ilmpc_policy_load(p_path.as_ptr(), &mut policy_handle),
            IlmpcStatus::IlmpcOk
        );
        let mut u = [0.0; 2];
        assert_eq!(
            ilmpc_policy_action(policy_handle, x.as_ptr(), 3, u.as_mut_ptr(), 2),
            IlmpcStatus::IlmpcOk
        );
        // Zero policy network gives the box midpoint.
        assert!((u[0] - 1.0).abs() < 1e-12 && u[1].abs() < 1e-12);

        // Drive the controller a few steps on the nominal model.
        let mut controller: *mut IlmpcController = ptr::null_mut();
        assert_eq!(
            ilmpc_controller_new(task, cert_handle, policy_handle, &mut controller),
            IlmpcStatus::IlmpcOk
        );
        let mut state = [4.5, 0.3, 0.0];
        for _ in 0..3 {
            let mut action = [0.0; 2];
            let status =
                ilmpc_controller_step(controller, state.as_ptr(), 3, action.as_mut_ptr(), 2);
            assert_eq!(status, IlmpcStatus::IlmpcOk, "step failed: {}", last_error());
            let mut next = [0.0; 3];
            assert_eq!(
                ilmpc_task_step(task, state.as_ptr(), 3, action.as_ptr(), 2, next.as_mut_ptr()),
                IlmpcStatus::IlmpcOk
            );
            state = next;
        }
        // A state inside the obstacle is refused.
        let bad = [0.0, 0.0, 0.0];
        let mut action = [0.0; 2];
        assert_eq!(
            ilmpc_controller_step(controller, bad.as_ptr(), 3, action.as_mut_ptr(), 2),
            IlmpcStatus::IlmpcSafetyViolation
        );

        ilmpc_controller_free(controller);
        ilmpc_policy_free(policy_handle);
        ilmpc_certificate_free(cert_handle);
        ilmpc_task_free(task);
    }
}
